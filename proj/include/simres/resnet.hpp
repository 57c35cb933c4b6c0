#pragma once

// Bottleneck ResNet-50 with configurable attention placement.
//
// Stage table (before width scaling):
//   stage  c_mid  c_out  blocks  first stride
//   2      64     256    3       1
//   3      128    512    4       2
//   4      256    1024   6       2
//   5      512    2048   3       2

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simres/nn.hpp"
#include "simres/rng.hpp"
#include "simres/simam.hpp"
#include "simres/tensor.hpp"

namespace simres {

enum class StemKind { paper_1x1, classic_7x7, small_3x3 };

inline std::string_view to_string(StemKind s) {
  switch (s) {
    case StemKind::paper_1x1: return "paper_1x1";
    case StemKind::classic_7x7: return "classic_7x7";
    case StemKind::small_3x3: return "small_3x3";
  }
  return "small_3x3";
}

inline StemKind parse_stem(std::string_view s) {
  for (auto k : {StemKind::paper_1x1, StemKind::classic_7x7, StemKind::small_3x3}) {
    if (to_string(k) == s) return k;
  }
  throw TensorError("resnet: unknown stem '" + std::string(s) + "'");
}

struct ResNetConfig {
  std::size_t input_channels = 2;
  std::size_t num_classes = 3;
  StemKind stem = StemKind::small_3x3;
  double width_mult = 1.0;
  SimAMConfig simam;
  std::array<std::size_t, 4> blocks_per_stage{3, 4, 6, 3};
  bool post_add_relu = true;
};

struct StageConfig {
  std::size_t c_mid;
  std::size_t c_out;
  std::size_t block_count;
  int first_block_stride;
};

/// Smallest accepted H and W: 32 for the stride-1 stem, 64 for the pooled
/// stems so the last stage keeps at least 2x2 positions.
inline std::size_t min_input_extent(StemKind stem) { return stem == StemKind::small_3x3 ? 32 : 64; }

inline std::size_t scaled_channels(std::size_t base, double width_mult) {
  if (!(width_mult > 0.0) || width_mult > 1.0) throw TensorError("resnet: width_mult must lie in (0, 1]");
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(base) * width_mult));
  if (c < 1) throw TensorError("resnet: width_mult " + std::to_string(width_mult) + " leaves zero channels");
  return c;
}

inline std::size_t stem_channels(const ResNetConfig& cfg) { return scaled_channels(64, cfg.width_mult); }

inline std::vector<StageConfig> stage_configs(const ResNetConfig& cfg) {
  std::vector<StageConfig> stages;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t mid = scaled_channels(std::size_t{64} << i, cfg.width_mult);
    if (cfg.blocks_per_stage[i] < 1) throw TensorError("resnet: every stage needs at least one block");
    stages.push_back({mid, 4 * mid, cfg.blocks_per_stage[i], i == 0 ? 1 : 2});
  }
  return stages;
}

template <typename Scalar>
struct Projection {
  Conv2dParams<Scalar> conv;
  BatchNormParams<Scalar> bn;
};

template <typename Scalar>
struct BottleneckParams {
  Conv2dParams<Scalar> conv1;  // 1x1, c_in -> c_mid
  BatchNormParams<Scalar> bn1;
  Conv2dParams<Scalar> conv2;  // 3x3, stride s, c_mid -> c_mid
  BatchNormParams<Scalar> bn2;
  Conv2dParams<Scalar> conv3;  // 1x1, c_mid -> 4 c_mid
  BatchNormParams<Scalar> bn3;
  std::optional<Projection<Scalar>> projection;

  std::size_t in_channels() const { return conv1.weight.dim(1); }
  std::size_t out_channels() const { return conv3.weight.dim(0); }
};

template <typename Scalar>
struct ResNetModel {
  using scalar_type = Scalar;
  ResNetConfig config;
  Conv2dParams<Scalar> stem_conv;
  BatchNormParams<Scalar> stem_bn;
  std::vector<std::vector<BottleneckParams<Scalar>>> stages;
  LinearParams<Scalar> head;

  std::size_t feature_channels() const { return stages.back().back().out_channels(); }
};

template <typename Scalar>
BottleneckParams<Scalar> make_bottleneck(std::size_t c_in, std::size_t c_mid, std::size_t c_out, int stride,
                                         std::mt19937_64& rng) {
  BottleneckParams<Scalar> b;
  b.conv1 = make_conv<Scalar>(c_in, c_mid, 1, 1, 0, false, rng);
  b.bn1 = make_batchnorm<Scalar>(c_mid);
  b.conv2 = make_conv<Scalar>(c_mid, c_mid, 3, stride, 1, false, rng);
  b.bn2 = make_batchnorm<Scalar>(c_mid);
  b.conv3 = make_conv<Scalar>(c_mid, c_out, 1, 1, 0, false, rng);
  b.bn3 = make_batchnorm<Scalar>(c_out);
  if (stride != 1 || c_in != c_out) {
    b.projection = Projection<Scalar>{make_conv<Scalar>(c_in, c_out, 1, stride, 0, false, rng), make_batchnorm<Scalar>(c_out)};
  }
  return b;
}

/// Deterministic weights from seed.
template <typename Scalar>
ResNetModel<Scalar> build_model(const ResNetConfig& cfg, std::uint64_t seed) {
  if (cfg.input_channels < 1 || cfg.num_classes < 1) throw TensorError("resnet: input_channels and num_classes must be >= 1");
  auto rng = make_rng(seed, "resnet.init");
  ResNetModel<Scalar> m;
  m.config = cfg;
  const std::size_t c0 = stem_channels(cfg);
  switch (cfg.stem) {
    case StemKind::paper_1x1: m.stem_conv = make_conv<Scalar>(cfg.input_channels, c0, 1, 1, 0, false, rng); break;
    case StemKind::classic_7x7: m.stem_conv = make_conv<Scalar>(cfg.input_channels, c0, 7, 2, 3, false, rng); break;
    case StemKind::small_3x3: m.stem_conv = make_conv<Scalar>(cfg.input_channels, c0, 3, 1, 1, false, rng); break;
  }
  m.stem_bn = make_batchnorm<Scalar>(c0);
  std::size_t c_in = c0;
  for (const StageConfig& st : stage_configs(cfg)) {
    auto& blocks = m.stages.emplace_back();
    for (std::size_t j = 0; j < st.block_count; ++j) {
      blocks.push_back(make_bottleneck<Scalar>(c_in, st.c_mid, st.c_out, j == 0 ? st.first_block_stride : 1, rng));
      c_in = st.c_out;
    }
  }
  m.head = make_linear<Scalar>(c_in, cfg.num_classes, rng);
  return m;
}

template <typename Scalar>
Tensor<Scalar> bottleneck_forward(const Tensor<Scalar>& x, BottleneckParams<Scalar>& p, const SimAMConfig& cfg, Mode mode,
                                  bool post_add_relu = true) {
  if (x.rank() != 4 || x.dim(1) != p.in_channels()) {
    throw TensorError("bottleneck: expected " + std::to_string(p.in_channels()) + " input channels, got " + to_string(x.shape()));
  }
  auto h = batchnorm_relu(conv2d(x, p.conv1), p.bn1, mode);
  h = batchnorm_relu(conv2d(h, p.conv2), p.bn2, mode);
  auto branch = batchnorm(conv2d(h, p.conv3), p.bn3, mode);
  auto shortcut = p.projection ? batchnorm(conv2d(x, p.projection->conv), p.projection->bn, mode) : x;
  return merge_residual(branch, shortcut, cfg, post_add_relu);
}

/// Trunk output after global pooling, [N, feature_channels].
template <typename Scalar>
Tensor<Scalar> embed(ResNetModel<Scalar>& m, const Tensor<Scalar>& x, Mode mode) {
  const auto& cfg = m.config;
  if (x.rank() != 4 || x.dim(1) != cfg.input_channels) {
    throw TensorError("resnet: expected [N," + std::to_string(cfg.input_channels) + ",H,W] input, got " + to_string(x.shape()));
  }
  const std::size_t min_extent = min_input_extent(cfg.stem);
  if (x.dim(2) < min_extent || x.dim(3) < min_extent) {
    throw TensorError("resnet: input " + to_string(x.shape()) + " below minimum spatial extent " + std::to_string(min_extent));
  }
  auto h = batchnorm_relu(conv2d(x, m.stem_conv), m.stem_bn, mode);
  if (cfg.stem != StemKind::small_3x3) h = maxpool2(h);
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    for (auto& block : m.stages[i]) h = bottleneck_forward(h, block, cfg.simam, mode, cfg.post_add_relu);
    if (i == 0 && cfg.simam.placement == SimAMPlacement::after_stage2) h = simam_forward(h, cfg.simam);
  }
  return global_avg_pool(h);
}

/// Class logits [N, num_classes].
template <typename Scalar>
Tensor<Scalar> forward(ResNetModel<Scalar>& m, const Tensor<Scalar>& x, Mode mode) {
  return linear(embed(m, x, mode), m.head);
}

// ---------------------------------------------------------------------------
// State traversal. fn(name, shape, data, trainable) visits every tensor and
// running statistic in a fixed order.

namespace detail {

template <typename Scalar, typename Fn>
void visit_conv(Conv2dParams<Scalar>& c, const std::string& prefix, Fn& fn) {
  fn(prefix + ".weight", c.weight.shape(), c.weight.mutable_values(), &c.weight);
  if (c.bias) fn(prefix + ".bias", c.bias->shape(), c.bias->mutable_values(), &*c.bias);
}

template <typename Scalar, typename Fn>
void visit_bn(BatchNormParams<Scalar>& b, const std::string& prefix, Fn& fn) {
  fn(prefix + ".gamma", b.gamma.shape(), b.gamma.mutable_values(), &b.gamma);
  fn(prefix + ".beta", b.beta.shape(), b.beta.mutable_values(), &b.beta);
  const Shape s{b.running_mean.size()};
  fn(prefix + ".running_mean", s, std::span<Scalar>(b.running_mean), static_cast<Tensor<Scalar>*>(nullptr));
  fn(prefix + ".running_var", s, std::span<Scalar>(b.running_var), static_cast<Tensor<Scalar>*>(nullptr));
}

}  // namespace detail

/// fn(name, shape, span<Scalar> data, Tensor<Scalar>* param) where param is
/// null for running statistics.
template <typename Scalar, typename Fn>
void visit_state(ResNetModel<Scalar>& m, Fn&& fn) {
  detail::visit_conv(m.stem_conv, "stem.conv", fn);
  detail::visit_bn(m.stem_bn, "stem.bn", fn);
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    for (std::size_t j = 0; j < m.stages[i].size(); ++j) {
      auto& b = m.stages[i][j];
      const std::string p = "stage" + std::to_string(i + 2) + "." + std::to_string(j);
      detail::visit_conv(b.conv1, p + ".conv1", fn);
      detail::visit_bn(b.bn1, p + ".bn1", fn);
      detail::visit_conv(b.conv2, p + ".conv2", fn);
      detail::visit_bn(b.bn2, p + ".bn2", fn);
      detail::visit_conv(b.conv3, p + ".conv3", fn);
      detail::visit_bn(b.bn3, p + ".bn3", fn);
      if (b.projection) {
        detail::visit_conv(b.projection->conv, p + ".proj.conv", fn);
        detail::visit_bn(b.projection->bn, p + ".proj.bn", fn);
      }
    }
  }
  visit_linear(m.head, "head", fn);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> parameters(ResNetModel<Scalar>& m) {
  std::vector<Tensor<Scalar>> out;
  visit_state(m, [&](const std::string&, const Shape&, std::span<Scalar>, Tensor<Scalar>* t) {
    if (t) out.push_back(*t);
  });
  return out;
}

/// Scalar parameters: conv weights/biases, batch-norm gamma/beta and the head.
template <typename Scalar>
std::size_t param_count(ResNetModel<Scalar>& m) {
  std::size_t total = 0;
  visit_state(m, [&](const std::string&, const Shape&, std::span<Scalar> data, Tensor<Scalar>* t) {
    if (t) total += data.size();
  });
  return total;
}

/// Sets every residual-branch bn3 gamma to zero (F = 0).
template <typename Scalar>
void zero_residual_branches(ResNetModel<Scalar>& m) {
  for (auto& stage : m.stages)
    for (auto& b : stage)
      for (Scalar& g : b.bn3.gamma.mutable_values()) g = Scalar(0);
}

}  // namespace simres
