#include <algorithm>
#include <cstring>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "simres/gradcheck.hpp"
#include "simres/resnet.hpp"

using namespace simres;
using T = Tensor<double>;

namespace {

ResNetConfig tiny_config(SimAMPlacement placement = SimAMPlacement::per_block_additive) {
  ResNetConfig cfg;
  cfg.width_mult = 0.125;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.simam.placement = placement;
  return cfg;
}

std::vector<double> all_state(ResNetModel<double>& m) {
  std::vector<double> out;
  visit_state(m, [&](const std::string&, const Shape&, std::span<double> d, T*) { out.insert(out.end(), d.begin(), d.end()); });
  return out;
}

}  // namespace

TEST(Bottleneck, ZeroResidualBranchGivesReluShortcut) {
  std::mt19937_64 rng(1);
  auto block = make_bottleneck<double>(16, 4, 16, 1, rng);
  for (double& g : block.bn3.gamma.mutable_values()) g = 0.0;
  T x({2, 16, 5, 5}, oracle::random_values(800, rng));
  SimAMConfig none;
  none.placement = SimAMPlacement::none;
  auto y = bottleneck_forward(x, block, none, Mode::train);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0, x[i]));
}

TEST(Bottleneck, StageTableShapes) {
  std::mt19937_64 rng(2);
  auto stage2 = make_bottleneck<float>(64, 64, 256, 1, rng);
  auto y = bottleneck_forward(Tensor<float>::full({1, 64, 56, 56}, 0.1f), stage2, SimAMConfig{}, Mode::infer);
  EXPECT_EQ(y.shape(), (Shape{1, 256, 56, 56}));
  EXPECT_TRUE(stage2.projection.has_value());

  auto stage3 = make_bottleneck<float>(256, 128, 512, 2, rng);
  auto z = bottleneck_forward(Tensor<float>::full({1, 256, 56, 56}, 0.1f), stage3, SimAMConfig{}, Mode::infer);
  EXPECT_EQ(z.shape(), (Shape{1, 512, 28, 28}));

  auto identity = make_bottleneck<float>(256, 64, 256, 1, rng);
  EXPECT_FALSE(identity.projection.has_value());
  EXPECT_THROW(bottleneck_forward(Tensor<float>::zeros({1, 64, 8, 8}), identity, SimAMConfig{}, Mode::infer), TensorError);
}

TEST(Bottleneck, GradCheck) {
  std::mt19937_64 rng(3);
  auto block = make_bottleneck<double>(8, 2, 8, 1, rng);
  T x({1, 8, 6, 6}, oracle::random_values(288, rng), true);
  T probe({1, 8, 6, 6}, oracle::random_values(288, rng));
  std::vector<T> in{x, block.conv1.weight, block.conv2.weight, block.conv3.weight, block.bn1.gamma, block.bn3.beta};
  SimAMConfig cfg;
  const double err = grad_check<double>([&] { return sum(mul(bottleneck_forward(x, block, cfg, Mode::train), probe)); }, in);
  EXPECT_LT(err, 1e-4);
}

TEST(BuildModel, StageTable) {
  ResNetConfig cfg;
  auto stages = stage_configs(cfg);
  ASSERT_EQ(stages.size(), 4u);
  std::vector<std::size_t> counts, mids, outs;
  for (auto& s : stages) {
    counts.push_back(s.block_count);
    mids.push_back(s.c_mid);
    outs.push_back(s.c_out);
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{3, 4, 6, 3}));
  EXPECT_EQ(mids, (std::vector<std::size_t>{64, 128, 256, 512}));
  EXPECT_EQ(outs, (std::vector<std::size_t>{256, 512, 1024, 2048}));
  EXPECT_EQ(stages[0].first_block_stride, 1);
  EXPECT_EQ(stages[3].first_block_stride, 2);

  auto m = build_model<float>(cfg, 0);
  std::vector<std::size_t> built;
  for (auto& s : m.stages) built.push_back(s.size());
  EXPECT_EQ(built, (std::vector<std::size_t>{3, 4, 6, 3}));
  EXPECT_EQ(m.feature_channels(), 2048u);
}

TEST(BuildModel, HeadWidthScales) {
  for (double w : {0.25, 0.5, 1.0}) {
    ResNetConfig cfg;
    cfg.width_mult = w;
    EXPECT_EQ(stage_configs(cfg).back().c_out, static_cast<std::size_t>(2048 * w));
  }
  ResNetConfig bad;
  bad.width_mult = 0.001;
  EXPECT_THROW(build_model<float>(bad, 0), TensorError);
}

TEST(BuildModel, ClassicParamCount) {
  ResNetConfig cfg;
  cfg.stem = StemKind::classic_7x7;
  cfg.input_channels = 3;
  cfg.num_classes = 1000;
  auto m = build_model<float>(cfg, 1);
  EXPECT_EQ(oracle::resnet50_param_count(3, 1000), 25557032u);
  EXPECT_EQ(param_count(m), oracle::resnet50_param_count(3, 1000));
}

TEST(ParamCount, SmallPieces) {
  std::mt19937_64 rng(0);
  auto conv = make_conv<double>(2, 4, 1, 1, 0, true, rng);
  EXPECT_EQ(conv.weight.size() + conv.bias->size(), 12u);
  auto lin = make_linear<double>(2048, 3, rng);
  EXPECT_EQ(lin.weight.size() + lin.bias.size(), 6147u);
}

TEST(BuildModel, DeterministicFromSeed) {
  auto a = build_model<double>(tiny_config(), 77);
  auto b = build_model<double>(tiny_config(), 77);
  auto c = build_model<double>(tiny_config(), 78);
  auto sa = all_state(a), sb = all_state(b), sc = all_state(c);
  ASSERT_EQ(sa.size(), sb.size());
  EXPECT_EQ(std::memcmp(sa.data(), sb.data(), sa.size() * sizeof(double)), 0);
  EXPECT_NE(sa, sc);
}

TEST(Forward, LogitShape) {
  ResNetConfig cfg;
  cfg.width_mult = 0.125;
  auto m = build_model<float>(cfg, 3);
  auto y = forward(m, Tensor<float>::full({2, 2, 64, 64}, 0.3f), Mode::infer);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_THROW(forward(m, Tensor<float>::zeros({1, 2, 16, 16}), Mode::infer), TensorError);
  EXPECT_THROW(forward(m, Tensor<float>::zeros({1, 3, 64, 64}), Mode::infer), TensorError);
}

TEST(Forward, AllStems) {
  for (StemKind stem : {StemKind::paper_1x1, StemKind::classic_7x7, StemKind::small_3x3}) {
    auto cfg = tiny_config();
    cfg.stem = stem;
    auto m = build_model<float>(cfg, 5);
    const std::size_t side = min_input_extent(stem);
    std::mt19937_64 rng(8);
    std::vector<float> v(2 * 2 * side * side);
    for (float& e : v) e = std::uniform_real_distribution<float>(0, 1)(rng);
    auto y = forward(m, Tensor<float>({2, 2, side, side}, v), Mode::train);
    EXPECT_EQ(y.shape(), (Shape{2, 3}));
    EXPECT_THROW(forward(m, Tensor<float>::zeros({1, 2, side - 2, side - 2}), Mode::infer), TensorError);
  }
}

TEST(Forward, AttentionChangesLogits) {
  std::mt19937_64 rng(4);
  T x({2, 2, 32, 32}, oracle::random_values(4096, rng, 0, 1));
  auto plain = build_model<double>(tiny_config(SimAMPlacement::none), 9);
  auto attn = build_model<double>(tiny_config(SimAMPlacement::per_block_additive), 9);
  auto a = forward(plain, x, Mode::infer), b = forward(attn, x, Mode::infer);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - b[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(Forward, InferModeIsPerSamplePure) {
  std::mt19937_64 rng(5);
  auto m = build_model<double>(tiny_config(), 10);
  auto s0 = oracle::random_values(2 * 32 * 32, rng, 0, 1), s1 = oracle::random_values(2 * 32 * 32, rng, 0, 1);
  std::vector<double> ab(s0), ba(s1), aa(s0);
  ab.insert(ab.end(), s1.begin(), s1.end());
  ba.insert(ba.end(), s0.begin(), s0.end());
  aa.insert(aa.end(), s0.begin(), s0.end());
  auto yab = forward(m, T({2, 2, 32, 32}, ab), Mode::infer);
  auto yba = forward(m, T({2, 2, 32, 32}, ba), Mode::infer);
  auto yaa = forward(m, T({2, 2, 32, 32}, aa), Mode::infer);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(yab[k], yba[3 + k]);
    EXPECT_EQ(yab[3 + k], yba[k]);
    EXPECT_EQ(yaa[k], yaa[3 + k]);
  }
}

TEST(Forward, ZeroBranchesGiveShortcutCascade) {
  auto cfg = tiny_config(SimAMPlacement::none);
  auto m = build_model<double>(cfg, 12);
  zero_residual_branches(m);
  std::mt19937_64 rng(6);
  T x({1, 2, 32, 32}, oracle::random_values(2048, rng, 0, 1));
  // Reference: stem then relu(projection) per stage, identity blocks pass relu(x) = x.
  auto h = relu(batchnorm(conv2d(x, m.stem_conv), m.stem_bn, Mode::infer));
  for (auto& stage : m.stages) {
    for (auto& b : stage) {
      h = b.projection ? relu(batchnorm(conv2d(h, b.projection->conv), b.projection->bn, Mode::infer)) : relu(h);
    }
  }
  auto expect = linear(global_avg_pool(h), m.head);
  auto got = forward(m, x, Mode::infer);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(got[i], expect[i]);
}

TEST(Forward, NetworkGradCheck) {
  ResNetConfig cfg;
  cfg.width_mult = 0.25;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.input_channels = 16;
  auto m = build_model<double>(cfg, 21);
  std::mt19937_64 rng(7);
  T x({1, 16, 32, 32}, oracle::random_values(16 * 32 * 32, rng), true);
  std::vector<int> label{1};
  std::vector<T> in{x, m.stem_conv.weight, m.stages[1][0].conv2.weight, m.stages[3][0].conv3.weight, m.head.weight};
  GradCheckOptions opts;
  opts.eps = 1e-6;  // 1e-4 probes straddle ReLU kinks somewhere in the network
  opts.max_coords_per_input = 24;
  opts.sample_seed = 3;
  const double err = grad_check<double>([&] { return softmax_cross_entropy(forward(m, x, Mode::train), label); }, in, opts);
  EXPECT_LT(err, 1e-4);
}
