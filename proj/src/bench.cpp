#include "simres/bench.hpp"

#include <cstdio>

#include "simres/mlp.hpp"
#include "simres/textio.hpp"

namespace simres {

std::string_view to_string(FeatureKind f) {
  switch (f) {
    case FeatureKind::raw: return "raw";
    case FeatureKind::subsample: return "subsample";
    case FeatureKind::histogram: return "histogram";
    case FeatureKind::pca: return "pca";
    case FeatureKind::hog: return "hog";
    case FeatureKind::hog_pca: return "hog+pca";
  }
  return "raw";
}

std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::resnet_simam: return "resnet_simam";
    case ModelKind::resnet_plain: return "resnet_plain";
    case ModelKind::mlp: return "mlp";
  }
  return "mlp";
}

const std::vector<FeatureKind>& all_feature_kinds() {
  static const std::vector<FeatureKind> kinds{FeatureKind::raw, FeatureKind::subsample, FeatureKind::histogram,
                                              FeatureKind::pca, FeatureKind::hog,       FeatureKind::hog_pca};
  return kinds;
}

const std::vector<ModelKind>& all_model_kinds() {
  static const std::vector<ModelKind> kinds{ModelKind::resnet_simam, ModelKind::resnet_plain, ModelKind::mlp};
  return kinds;
}

FeatureKind parse_feature_kind(std::string_view s) {
  for (auto f : all_feature_kinds()) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown feature kind '" + std::string(s) + "'");
}

ModelKind parse_model_kind(std::string_view s) {
  for (auto m : all_model_kinds()) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

TrainConfig default_head_config() {
  TrainConfig t;
  t.epochs = 100;
  t.batch_size = 32;
  return t;
}

void FeatureParams::validate() const {
  if (subsample_extent < 1) throw ConfigError("features: subsample_extent must be >= 1");
  if (histogram_bins < 1) throw ConfigError("features: histogram_bins must be >= 1");
  if (pca_components < 1) throw ConfigError("features: pca_components must be >= 1");
  if (hog.cell < 1 || hog.bins < 1 || hog.block < 1 || !(hog.eps > 0.0)) throw ConfigError("features: invalid hog parameters");
}

// ---------------------------------------------------------------------------
// Pair features

namespace {

std::vector<double> flatten(const GrayImage& img) { return {img.pixels().begin(), img.pixels().end()}; }

RowMatrixXd image_rows(const std::vector<RadiographPair>& pairs, const std::function<std::vector<double>(const GrayImage&)>& f) {
  std::vector<std::vector<double>> rows;
  rows.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    rows.push_back(f(p.before));
    rows.push_back(f(p.after));
  }
  return stack_rows(rows);
}

}  // namespace

std::vector<double> PairFeaturizer::image_features(const GrayImage& img) const {
  switch (kind_) {
    case FeatureKind::raw:
    case FeatureKind::pca: return flatten(img);
    case FeatureKind::subsample: return subsample(img, params_.subsample_extent, params_.subsample_extent);
    case FeatureKind::histogram: return intensity_histogram(img, params_.histogram_bins);
    case FeatureKind::hog:
    case FeatureKind::hog_pca: return hog(img, params_.hog);
  }
  return {};
}

void PairFeaturizer::fit(const std::vector<RadiographPair>& pairs) {
  if (kind_ != FeatureKind::pca && kind_ != FeatureKind::hog_pca) return;
  const RowMatrixXd x = image_rows(pairs, [this](const GrayImage& g) { return image_features(g); });
  pca_ = pca_fit(x, params_.pca_components);
}

RowMatrixXd PairFeaturizer::transform(const std::vector<RadiographPair>& pairs) const {
  if (pairs.empty()) throw DataError("features: no pairs");
  RowMatrixXd per_image = image_rows(pairs, [this](const GrayImage& g) { return image_features(g); });
  if (kind_ == FeatureKind::pca || kind_ == FeatureKind::hog_pca) {
    if (!pca_) throw DataError("features: " + std::string(to_string(kind_)) + " used before fit");
    per_image = pca_transform(*pca_, per_image);
  }
  // rows 2i and 2i+1 are the before and after images of pair i
  const Eigen::Index d = per_image.cols();
  RowMatrixXd out(static_cast<Eigen::Index>(pairs.size()), 2 * d);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).head(d) = per_image.row(2 * i);
    out.row(i).tail(d) = per_image.row(2 * i + 1);
  }
  return out;
}

Standardizer Standardizer::fit(const RowMatrixXd& x) {
  if (x.rows() < 1) throw DataError("standardize: no rows");
  Standardizer s;
  s.mean = x.colwise().mean();
  const RowMatrixXd centred = x.rowwise() - s.mean;
  s.scale = (centred.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().matrix();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
  }
  return s;
}

RowMatrixXd Standardizer::apply(const RowMatrixXd& x) const {
  if (x.cols() != mean.size()) throw DataError("standardize: column count mismatch");
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

// ---------------------------------------------------------------------------
// Grid

void BenchConfig::validate() const {
  resnet.simam.validate();
  cnn.validate();
  head.validate();
  features.validate();
  if (mlp_hidden < 1) throw ConfigError("bench: mlp_hidden must be >= 1");
  if (models.empty() || feature_kinds.empty()) throw ConfigError("bench: models and feature_kinds must be non-empty");
  if (resnet.simam.placement == SimAMPlacement::none) {
    for (auto m : models) {
      if (m == ModelKind::resnet_simam) throw ConfigError("bench: resnet_simam needs a SimAM placement other than none");
    }
  }
}

namespace {

std::vector<int> labels_of(const std::vector<RadiographPair>& pairs) {
  std::vector<int> y;
  y.reserve(pairs.size());
  for (const auto& p : pairs) y.push_back(label_index(p.label));
  return y;
}

RowMatrixXd embeddings(ResNetModel<float>& model, const std::vector<RadiographPair>& pairs) {
  const std::size_t d = model.feature_channels();
  RowMatrixXd out(static_cast<Eigen::Index>(pairs.size()), static_cast<Eigen::Index>(d));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < pairs.size(); start += 64) {
    const std::size_t stop = std::min(pairs.size(), start + 64);
    idx.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
    const auto e = embed(model, batch_input<float>(pairs, idx), Mode::infer);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) out(static_cast<Eigen::Index>(start + r), static_cast<Eigen::Index>(j)) = e[r * d + j];
  }
  return out;
}

RowMatrixXd hconcat(const RowMatrixXd& a, const RowMatrixXd& b) {
  RowMatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

double head_score(const RowMatrixXd& train_x, const std::vector<int>& train_y, const RowMatrixXd& val_x,
                  const std::vector<int>& val_y, const BenchConfig& cfg, std::uint64_t seed) {
  const auto scaler = Standardizer::fit(train_x);
  FeatureData tr(scaler.apply(train_x), train_y), va(scaler.apply(val_x), val_y);
  auto head = build_mlp<double>(tr.dim(), cfg.mlp_hidden, kNumLabels, seed);
  TrainConfig tc = cfg.head;
  tc.seed = derive_seed(seed, "train");
  tc.augmentation.reset();
  train(head, tr, va, tc);
  return evaluate(head, va).macro_f1;
}

}  // namespace

BenchGrid benchmark_grid(const std::vector<RadiographPair>& train_pairs, const std::vector<RadiographPair>& val_pairs,
                         const BenchConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (train_pairs.empty() || val_pairs.empty()) throw DataError("bench: train and validation splits must be non-empty");
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  BenchGrid grid;
  grid.models = cfg.models;
  grid.feature_kinds = cfg.feature_kinds;
  grid.macro_f1.assign(cfg.models.size(), std::vector<double>(cfg.feature_kinds.size(), 0.0));
  grid.protocol.assign(cfg.models.size(), std::vector<std::string>(cfg.feature_kinds.size()));
  const auto train_y = labels_of(train_pairs), val_y = labels_of(val_pairs);

  // Pair features are shared by every row.
  std::vector<RowMatrixXd> feat_train(cfg.feature_kinds.size()), feat_val(cfg.feature_kinds.size());
  for (std::size_t f = 0; f < cfg.feature_kinds.size(); ++f) {
    PairFeaturizer fz(cfg.feature_kinds[f], cfg.features);
    fz.fit(train_pairs);
    feat_train[f] = fz.transform(train_pairs);
    feat_val[f] = fz.transform(val_pairs);
  }

  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    const ModelKind kind = cfg.models[m];
    const std::string row_name(to_string(kind));
    if (kind == ModelKind::mlp) {
      for (std::size_t f = 0; f < cfg.feature_kinds.size(); ++f) {
        const std::string col(to_string(cfg.feature_kinds[f]));
        grid.macro_f1[m][f] = head_score(feat_train[f], train_y, feat_val[f], val_y, cfg, derive_seed(cfg.seed, "bench.mlp", f));
        grid.protocol[m][f] = "mlp(" + col + ")";
        say(row_name + " x " + col + ": " + format_double(grid.macro_f1[m][f]));
      }
      continue;
    }
    ResNetConfig rc = cfg.resnet;
    rc.input_channels = train_pairs.front().channels();
    rc.num_classes = kNumLabels;
    if (kind == ModelKind::resnet_plain) rc.simam.placement = SimAMPlacement::none;
    const std::uint64_t row_seed = derive_seed(cfg.seed, "bench.cnn", m);
    auto net = build_model<float>(rc, row_seed);
    TrainConfig tc = cfg.cnn;
    tc.seed = derive_seed(row_seed, "train");
    say(row_name + ": training on raw pairs (" + std::to_string(tc.epochs) + " epochs)");
    train(net, PairData(train_pairs), PairData(val_pairs), tc);
    const double raw_f1 = evaluate(net, PairData(val_pairs)).macro_f1;
    const RowMatrixXd emb_train = embeddings(net, train_pairs), emb_val = embeddings(net, val_pairs);
    for (std::size_t f = 0; f < cfg.feature_kinds.size(); ++f) {
      const std::string col(to_string(cfg.feature_kinds[f]));
      if (cfg.feature_kinds[f] == FeatureKind::raw) {
        grid.macro_f1[m][f] = raw_f1;
        grid.protocol[m][f] = "cnn(raw)";
      } else {
        grid.macro_f1[m][f] = head_score(hconcat(emb_train, feat_train[f]), train_y, hconcat(emb_val, feat_val[f]), val_y, cfg,
                                         derive_seed(row_seed, "bench.head", f));
        grid.protocol[m][f] = "cnn-embedding+" + col + " -> mlp";
      }
      say(row_name + " x " + col + ": " + format_double(grid.macro_f1[m][f]));
    }
  }

  grid.caption = "Validation macro-F1 on synthetic before/after pairs (" + std::to_string(train_pairs.size()) + " train, " +
                 std::to_string(val_pairs.size()) +
                 " validation). Synthetic data: the scores check the pipeline and are not clinical results. "
                 "CNN rows: raw = network trained on the image pair; other columns = frozen network embedding plus the "
                 "feature vector, classified by an MLP head. MLP rows: 2-layer MLP (hidden " +
                 std::to_string(cfg.mlp_hidden) + ") on the feature vector; raw = flattened pixels.";
  return grid;
}

std::string format_grid_text(const BenchGrid& grid) {
  std::string out;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-14s", "model");
  out += cell;
  for (auto f : grid.feature_kinds) {
    std::snprintf(cell, sizeof cell, " %10s", std::string(to_string(f)).c_str());
    out += cell;
  }
  out += '\n';
  for (std::size_t m = 0; m < grid.models.size(); ++m) {
    std::snprintf(cell, sizeof cell, "%-14s", std::string(to_string(grid.models[m])).c_str());
    out += cell;
    for (double v : grid.macro_f1[m]) {
      std::snprintf(cell, sizeof cell, " %10.4f", v);
      out += cell;
    }
    out += '\n';
  }
  out += '\n' + grid.caption + '\n';
  return out;
}

std::string format_grid_csv(const BenchGrid& grid) {
  std::string out = "model";
  for (auto f : grid.feature_kinds) out += "," + std::string(to_string(f));
  out += '\n';
  for (std::size_t m = 0; m < grid.models.size(); ++m) {
    out += std::string(to_string(grid.models[m]));
    for (double v : grid.macro_f1[m]) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

}  // namespace simres
