#pragma once

// Mini-batch SGD training, evaluation and learning-curve export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "simres/datapipe.hpp"
#include "simres/errors.hpp"
#include "simres/features.hpp"
#include "simres/metrics.hpp"
#include "simres/nn.hpp"
#include "simres/rng.hpp"
#include "simres/tensor.hpp"

namespace simres {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 16;
  double lr = 0.01;
  // Cosine schedule ends at min(lr_floor, lr).
  double lr_floor = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Rescales the joint gradient to this L2 norm when it is larger; 0 disables.
  double grad_clip_norm = 0.0;
  std::uint64_t seed = 0;
  std::optional<AugmentPolicy> augmentation;

  void validate() const;
};

/// Per-epoch cosine decay from lr towards min(lr_floor, lr); epoch is 0-based.
double learning_rate(const TrainConfig& cfg, std::size_t epoch);

struct CurvePoint {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

// ---------------------------------------------------------------------------
// Datasets. Both expose size(), label(i) and batch<Scalar>(indices, policy,
// seed); sample i of a batch is augmented from stream (seed, "sample", i).

class PairData {
 public:
  PairData() = default;
  explicit PairData(std::vector<RadiographPair> pairs);

  std::size_t size() const { return pairs_.size(); }
  int label(std::size_t i) const { return label_index(pairs_[i].label); }
  const std::vector<RadiographPair>& pairs() const { return pairs_; }
  std::size_t channels() const { return pairs_.empty() ? 0 : pairs_.front().channels(); }

  template <typename Scalar>
  Tensor<Scalar> batch(std::span<const std::size_t> indices, const AugmentPolicy* policy, std::uint64_t seed) const;

 private:
  std::vector<RadiographPair> pairs_;
};

class FeatureData {
 public:
  FeatureData() = default;
  FeatureData(RowMatrixXd features, std::vector<int> labels);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  int label(std::size_t i) const { return labels_[i]; }
  const RowMatrixXd& features() const { return features_; }

  template <typename Scalar>
  Tensor<Scalar> batch(std::span<const std::size_t> indices, const AugmentPolicy* policy, std::uint64_t seed) const;

 private:
  RowMatrixXd features_;
  std::vector<int> labels_;
};

template <typename Scalar>
Tensor<Scalar> PairData::batch(std::span<const std::size_t> indices, const AugmentPolicy* policy, std::uint64_t seed) const {
  if (!policy) return batch_input<Scalar>(pairs_, indices);
  std::vector<RadiographPair> augmented;
  augmented.reserve(indices.size());
  for (std::size_t i : indices) {
    auto rng = make_rng(seed, "sample", i);
    augmented.push_back(augment(pairs_.at(i), *policy, rng));
  }
  std::vector<std::size_t> local(indices.size());
  std::iota(local.begin(), local.end(), std::size_t{0});
  return batch_input<Scalar>(augmented, local);
}

template <typename Scalar>
Tensor<Scalar> FeatureData::batch(std::span<const std::size_t> indices, const AugmentPolicy*, std::uint64_t) const {
  if (indices.empty()) throw DataError("feature batch: empty batch");
  const std::size_t d = dim();
  std::vector<Scalar> data(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto row = features_.row(static_cast<Eigen::Index>(indices[r]));
    for (std::size_t j = 0; j < d; ++j) data[r * d + j] = static_cast<Scalar>(row(static_cast<Eigen::Index>(j)));
  }
  return Tensor<Scalar>({indices.size(), d}, std::move(data));
}

// ---------------------------------------------------------------------------

namespace detail {

/// Per-row -log softmax(logits)[label] in double, and the argmax (lowest
/// index on ties).
template <typename Scalar>
void score_rows(const Tensor<Scalar>& logits, std::span<const int> labels, double* losses, int* predictions) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> row(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(logits[r * k + j]);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    if (losses) losses[r] = std::log(z) + mx - row[static_cast<std::size_t>(labels[r])];
    if (predictions) predictions[r] = argmax_row(row);
  }
}

struct InferResult {
  std::vector<int> predictions;
  std::vector<double> losses;
};

template <typename Model, typename Data>
InferResult infer_pass(Model& model, const Data& data, std::size_t batch_size) {
  using Scalar = typename Model::scalar_type;
  if (data.size() == 0) throw DataError("evaluate: empty dataset");
  InferResult out;
  out.predictions.resize(data.size());
  out.losses.resize(data.size());
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t stop = std::min(data.size(), start + batch_size);
    idx.resize(stop - start);
    labels.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) {
      idx[i - start] = i;
      labels[i - start] = data.label(i);
    }
    const auto logits = forward(model, data.template batch<Scalar>(idx, nullptr, 0), Mode::infer);
    score_rows(logits, labels, out.losses.data() + start, out.predictions.data() + start);
  }
  return out;
}

inline double mean_in_order(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

template <typename Model, typename Data>
std::pair<double, double> loss_and_accuracy(Model& model, const Data& data, std::size_t batch_size) {
  const auto r = infer_pass(model, data, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += r.predictions[i] == data.label(i);
  return {mean_in_order(r.losses), static_cast<double>(correct) / static_cast<double>(data.size())};
}

}  // namespace detail

/// Infer-mode predictions, argmax with ties to the lowest class index.
template <typename Model, typename Data>
std::vector<int> predict(Model& model, const Data& data, std::size_t batch_size = 64) {
  return detail::infer_pass(model, data, batch_size).predictions;
}

template <typename Model, typename Data>
MetricsReport evaluate(Model& model, const Data& data, std::size_t batch_size = 64) {
  const auto pred = predict(model, data, batch_size);
  std::vector<int> truth(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) truth[i] = data.label(i);
  return f1_macro(confusion_from_labels(truth, pred));
}

using EpochHook = std::function<void(const CurvePoint&)>;

/// SGD with momentum and weight decay over shuffled mini-batches; one curve
/// point per epoch, also passed to on_epoch. The model is updated in place.
/// Train and validation columns are both scored after the epoch's last step,
/// in infer mode and without augmentation, averaging per-sample losses in
/// dataset order.
template <typename Model, typename Data>
std::vector<CurvePoint> train(Model& model, const Data& train_set, const Data& val_set, const TrainConfig& cfg,
                              const EpochHook& on_epoch = {}) {
  using Scalar = typename Model::scalar_type;
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw DataError("train: train and validation sets must be non-empty");
  auto params = parameters(model);
  std::vector<Buffer<Scalar>> velocity(params.size());
  const AugmentPolicy* policy = cfg.augmentation ? &*cfg.augmentation : nullptr;
  const std::uint64_t aug_root = derive_seed(cfg.seed, "augment", policy ? policy->seed : 0);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);
  std::vector<int> labels;
  std::vector<CurvePoint> curve;
  curve.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto lr = static_cast<Scalar>(learning_rate(cfg, epoch));
    const auto mu = static_cast<Scalar>(cfg.momentum);
    const auto wd = static_cast<Scalar>(cfg.weight_decay);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = make_rng(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t aug_seed = derive_seed(aug_root, "epoch", epoch);
    for (std::size_t start = 0, b = 0; start < n; start += cfg.batch_size, ++b) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
      labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.label(idx[i]);
      const std::string where = "train: epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b + 1) + ": ";
      Tensor<Scalar> loss;
      try {
        loss = softmax_cross_entropy(forward(model, train_set.template batch<Scalar>(idx, policy, aug_seed), Mode::train), labels);
      } catch (const TensorError& e) {
        throw TensorError(where + e.what());
      }
      if (!std::isfinite(static_cast<double>(loss.item()))) throw TensorError(where + "non-finite loss");
      backward(loss);
      Scalar clip = Scalar(1);
      if (cfg.grad_clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& p : params) {
          if (!p.has_grad()) continue;
          const Scalar* g = p.grad().data();
          sq += static_cast<double>(detail::ordered_sum<Scalar>(p.size(), [g](std::size_t i) { return g[i] * g[i]; }));
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip_norm) clip = static_cast<Scalar>(cfg.grad_clip_norm / norm);
      }
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].has_grad()) continue;
        auto w = params[k].mutable_values();
        auto g = params[k].grad();
        auto& v = velocity[k];
        if (v.empty()) v.assign(w.size(), Scalar(0));
        auto vm = amap(v.data(), v.size());
        auto wm = amap(w.data(), w.size());
        vm = mu * vm + (clip * amap(g.data(), g.size()) + wd * wm);
        wm -= lr * vm;
      }
    }
    CurvePoint pt;
    pt.epoch = epoch + 1;
    const std::size_t eval_batch = std::max<std::size_t>(cfg.batch_size, 64);
    std::tie(pt.train_loss, pt.train_accuracy) = detail::loss_and_accuracy(model, train_set, eval_batch);
    std::tie(pt.val_loss, pt.val_accuracy) = detail::loss_and_accuracy(model, val_set, eval_batch);
    curve.push_back(pt);
    if (on_epoch) on_epoch(pt);
  }
  return curve;
}

/// Trailing moving average over full windows: output i averages v[i..i+w).
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

std::vector<double> train_losses(const std::vector<CurvePoint>& curve);

/// Writes <prefix>.csv (epoch,train_loss,train_acc,val_loss,val_acc) and
/// <prefix>.svg (loss and accuracy panels).
void export_curves(const std::vector<CurvePoint>& curve, const std::filesystem::path& prefix);
std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path);

/// Raises the glibc mmap and trim thresholds so per-step activation buffers are
/// recycled from the heap instead of being mapped and unmapped every batch.
void configure_allocator();

}  // namespace simres
