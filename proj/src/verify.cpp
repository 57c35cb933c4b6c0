#include "simres/verify.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <utility>

#include "simres/datapipe.hpp"
#include "simres/features.hpp"
#include "simres/gradcheck.hpp"
#include "simres/metrics.hpp"
#include "simres/nn.hpp"
#include "simres/resnet.hpp"
#include "simres/simam.hpp"

namespace simres {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> VerifyReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name);
  }
  return out;
}

namespace {

using T = Tensor<double>;

struct Outcome {
  bool ok;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Outcome below(double err, double tol) { return {err < tol, "max err " + sci(err) + ", tol " + sci(tol)}; }

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& e : v) e = u(rng);
  return v;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Gradient checks

Outcome grad_conv2d() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {2, 0, 1}}) {
    T x({2, 3, 6, 5}, rand_vec(180, rng), true);
    auto p = make_conv<double>(3, 4, static_cast<std::size_t>(k), stride, pad, true, rng);
    const std::size_t oh = conv_output_extent(6, k, stride, pad), ow = conv_output_extent(5, k, stride, pad);
    T probe({2, 4, oh, ow}, rand_vec(8 * oh * ow, rng));
    std::vector<T> in{x, p.weight, *p.bias};
    worst = std::max(worst, grad_check<double>([&] { return sum(mul(conv2d(x, p), probe)); }, in));
  }
  return below(worst, 1e-4);
}

Outcome grad_batchnorm() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (Mode mode : {Mode::train, Mode::infer}) {
    auto p = make_batchnorm<double>(3);
    for (double& g : p.gamma.mutable_values()) g = 0.5 + std::uniform_real_distribution<double>(0, 1)(rng);
    for (double& b : p.beta.mutable_values()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    T x({2, 3, 3, 4}, rand_vec(72, rng), true);
    T probe({2, 3, 3, 4}, rand_vec(72, rng));
    std::vector<T> in{x, p.gamma, p.beta};
    worst = std::max(worst, grad_check<double>([&] { return sum(mul(batchnorm(x, p, mode), probe)); }, in));
  }
  return below(worst, 1e-4);
}

Outcome grad_linear() {
  std::mt19937_64 rng(3);
  T x({3, 5}, rand_vec(15, rng), true);
  LinearParams<double> p{T({4, 5}, rand_vec(20, rng), true), T({4}, rand_vec(4, rng), true)};
  T probe({3, 4}, rand_vec(12, rng));
  std::vector<T> in{x, p.weight, p.bias};
  return below(grad_check<double>([&] { return sum(mul(linear(x, p), probe)); }, in), 1e-4);
}

Outcome grad_maxpool() {
  // distinct values 0.1 apart keep every probe away from a tie
  std::mt19937_64 rng(4);
  std::vector<double> v(2 * 2 * 4 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  T x({2, 2, 4, 4}, v, true);
  T probe({2, 2, 2, 2}, rand_vec(16, rng));
  std::vector<T> in{x};
  return below(grad_check<double>([&] { return sum(mul(maxpool2(x), probe)); }, in), 1e-4);
}

Outcome grad_softmax_ce() {
  std::mt19937_64 rng(5);
  T logits({4, 3}, rand_vec(12, rng, -3, 3), true);
  const std::vector<int> labels{0, 2, 1, 2};
  std::vector<T> in{logits};
  return below(grad_check<double>([&] { return softmax_cross_entropy(logits, labels); }, in), 1e-4);
}

Outcome grad_simam() {
  std::mt19937_64 rng(6);
  SimAMConfig cfg;
  T x({2, 3, 4, 4}, rand_vec(96, rng), true);
  T probe({2, 3, 4, 4}, rand_vec(96, rng));
  std::vector<T> in{x};
  return below(grad_check<double>([&] { return sum(mul(simam_forward(x, cfg), probe)); }, in), 1e-4);
}

Outcome grad_bottleneck() {
  std::mt19937_64 rng(7);
  auto block = make_bottleneck<double>(8, 2, 8, 1, rng);
  T x({1, 8, 6, 6}, rand_vec(288, rng), true);
  T probe({1, 8, 6, 6}, rand_vec(288, rng));
  std::vector<T> in{x, block.conv1.weight, block.conv2.weight, block.conv3.weight, block.bn1.gamma, block.bn3.beta};
  const SimAMConfig cfg;
  return below(grad_check<double>([&] { return sum(mul(bottleneck_forward(x, block, cfg, Mode::train), probe)); }, in), 1e-4);
}

Outcome grad_network() {
  ResNetConfig cfg;
  cfg.width_mult = 0.25;
  cfg.blocks_per_stage = {1, 1, 1, 1};
  cfg.input_channels = 16;
  auto m = build_model<double>(cfg, 21);
  std::mt19937_64 rng(8);
  T x({1, 16, 32, 32}, rand_vec(16 * 32 * 32, rng), true);
  const std::vector<int> label{1};
  std::vector<T> in{x, m.stem_conv.weight, m.stages[1][0].conv2.weight, m.stages[3][0].conv3.weight, m.head.weight};
  GradCheckOptions opts;
  opts.eps = 1e-6;
  opts.max_coords_per_input = 24;
  opts.sample_seed = 3;
  return below(grad_check<double>([&] { return softmax_cross_entropy(forward(m, x, Mode::train), label); }, in, opts), 1e-4);
}

// ---------------------------------------------------------------------------
// SimAM

Outcome simam_fixed_point() {
  double worst = 0.0;
  for (double v : {-1.5, 0.0, 0.3, 2.0}) {
    const auto y = simam_forward(T::full({2, 3, 4, 4}, v), SimAMConfig{});
    for (double e : y.values()) worst = std::max(worst, std::abs(e - v * logistic(0.5)));
  }
  return below(worst, 1e-9);
}

Outcome simam_precondition(const VerifyOptions& opts) {
  // A 1x1 plane has no spatial statistics and must be rejected.
  bool rejected = false;
  try {
    simam_forward(T::full({1, 1, 1, 1}, 1.0), SimAMConfig{});
  } catch (const TensorError&) {
    rejected = true;
  }
  if (!rejected) return {false, "1x1 spatial input was accepted"};
  SimAMConfig cfg;
  cfg.lambda = opts.simam_lambda;
  try {
    const auto y = simam_forward(T::full({1, 2, 2, 2}, 0.75), cfg);
    double worst = 0.0;
    for (double e : y.values()) worst = std::isfinite(e) ? std::max(worst, std::abs(e - 0.75 * logistic(0.5))) : INFINITY;
    return {worst < 1e-9, "constant plane with lambda " + sci(cfg.lambda) + ": max err " + sci(worst)};
  } catch (const TensorError& e) {
    return {false, "constant plane with lambda " + sci(cfg.lambda) + ": " + e.what()};
  }
}

Outcome simam_mean_shift() {
  std::mt19937_64 rng(9);
  auto v = rand_vec(2 * 3 * 4 * 4, rng);
  auto shifted = v;
  for (double& e : shifted) e += 0.75;
  const auto w0 = simam_weights(T({2, 3, 4, 4}, v), SimAMConfig{});
  const auto w1 = simam_weights(T({2, 3, 4, 4}, shifted), SimAMConfig{});
  double worst = 0.0;
  for (std::size_t i = 0; i < w0.size(); ++i) worst = std::max(worst, std::abs(w0[i] - w1[i]));
  return below(worst, 1e-12);
}

Outcome simam_weight_range() {
  std::mt19937_64 rng(10);
  double lo = 1.0, hi = 0.0;
  for (double lambda : {1e-4, 1e-2, 1.0}) {
    SimAMConfig cfg;
    cfg.lambda = lambda;
    const auto w = simam_weights(T({3, 4, 5, 5}, rand_vec(300, rng, -5, 5)), cfg);
    for (double e : w.values()) {
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  }
  return {lo > 0.5 && hi < 1.0, "weights in [" + sci(lo) + ", " + sci(hi) + "]"};
}

// ---------------------------------------------------------------------------
// Network structure

Outcome residual_identity() {
  std::mt19937_64 rng(11);
  auto block = make_bottleneck<double>(8, 2, 8, 1, rng);
  for (double& g : block.bn3.gamma.mutable_values()) g = 0.0;
  SimAMConfig cfg;
  cfg.placement = SimAMPlacement::none;
  const T x({2, 8, 5, 5}, rand_vec(400, rng));
  std::size_t mismatches = 0;
  for (Mode mode : {Mode::train, Mode::infer}) {
    const auto y = bottleneck_forward(x, block, cfg, mode);
    for (std::size_t i = 0; i < x.size(); ++i) mismatches += y[i] != std::max(0.0, x[i]);
  }
  return {mismatches == 0, std::to_string(mismatches) + " elements differ from relu(shortcut)"};
}

Outcome structure() {
  ResNetConfig def;
  auto stages = stage_configs(def);
  std::vector<std::size_t> counts;
  for (const auto& s : stages) counts.push_back(s.block_count);
  if (counts != std::vector<std::size_t>{3, 4, 6, 3}) return {false, "default stage block counts differ from [3,4,6,3]"};
  ResNetConfig classic;
  classic.stem = StemKind::classic_7x7;
  classic.input_channels = 3;
  classic.num_classes = 1000;
  auto m = build_model<float>(classic, 1);
  const std::size_t n = param_count(m);
  return {n == 25557032u, "blocks [3,4,6,3], classic parameters " + std::to_string(n) + " (expected 25557032)"};
}

// ---------------------------------------------------------------------------
// Metrics

double macro_f1_by_expansion(const Confusion& conf) {
  std::vector<int> truth, pred;
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      for (std::int64_t k = 0; k < conf(t, p); ++k) {
        truth.push_back(t);
        pred.push_back(p);
      }
  double f1[3];
  for (int c = 0; c < 3; ++c) {
    std::int64_t tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      predicted += pred[i] == c;
      actual += truth[i] == c;
      tp += pred[i] == c && truth[i] == c;
    }
    const double p = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    const double r = actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
    f1[c] = (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  return (f1[0] + f1[1] + f1[2]) / 3.0;
}

Outcome f1_oracle() {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> cell(0, 12);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Confusion c;
    do {
      for (int i = 0; i < 9; ++i) c(i / 3, i % 3) = cell(rng) < 4 ? 0 : cell(rng);
    } while (c.sum() == 0);
    mismatches += f1_macro(c).macro_f1 != macro_f1_by_expansion(c);
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 1000 random matrices differ"};
}

Outcome f1_degenerate() {
  Confusion c = Confusion::Zero();
  c(0, 0) = c(1, 0) = c(2, 0) = 10;
  const double f = f1_macro(c).macro_f1;
  return {std::abs(f - 1.0 / 6.0) < 1e-12, "all-one-class macro_f1 " + sci(f)};
}

// ---------------------------------------------------------------------------
// Features

Outcome conv_naive() {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  const std::size_t n = 2, c = 3, h = 7, w = 6, f = 4;
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 3, 7}}) {
    const auto x = rand_vec(n * c * h * w, rng);
    auto p = make_conv<double>(c, f, static_cast<std::size_t>(k), stride, pad, true, rng);
    const auto y = conv2d(T({n, c, h, w}, x), p);
    const std::size_t oh = y.dim(2), ow = y.dim(3);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < f; ++o)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            double acc = (*p.bias)[o];
            for (std::size_t ch = 0; ch < c; ++ch)
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                  const long iy = static_cast<long>(oy) * stride + i - pad, ix = static_cast<long>(ox) * stride + j - pad;
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                  acc += x[((b * c + ch) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                         p.weight[((o * c + ch) * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)) * static_cast<std::size_t>(k) +
                                  static_cast<std::size_t>(j)];
                }
            worst = std::max(worst, std::abs(acc - y[((b * f + o) * oh + oy) * ow + ox]));
          }
  }
  return below(worst, 1e-12);
}

Outcome hog_invariants() {
  const HogSpec spec;
  if (hog(GrayImage::filled(64, 64, 0.0), spec).size() != 1764u) return {false, "64x64 descriptor length is not 1764"};
  for (double v : hog(GrayImage::filled(32, 32, 0.4), spec)) {
    if (v != 0.0) return {false, "flat image gives a non-zero descriptor"};
  }
  std::mt19937_64 rng(14);
  double scale_err = 0.0, max_block_norm = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    auto px = rand_vec(64 * 64, rng, 0.0, 1.0);
    GrayImage img(64, 64, px);
    for (double& e : px) e *= 0.5;
    const auto a = hog(img, spec), b = hog(GrayImage(64, 64, px), spec);
    for (std::size_t i = 0; i < a.size(); ++i) scale_err = std::max(scale_err, std::abs(a[i] - b[i]));
    const std::size_t block = spec.block * spec.block * spec.bins;
    for (std::size_t s = 0; s < a.size(); s += block) {
      double sq = 0.0;
      for (std::size_t i = s; i < s + block; ++i) sq += a[i] * a[i];
      max_block_norm = std::max(max_block_norm, std::sqrt(sq));
    }
  }
  return {scale_err < 1e-8 && max_block_norm <= 1.0 + 1e-12,
          "contrast change " + sci(scale_err) + ", largest block norm " + sci(max_block_norm)};
}

Outcome pca_invariants() {
  std::mt19937_64 rng(15);
  const Eigen::Index n = 40, d = 10;
  RowMatrixXd x(n, d);
  const auto v = rand_vec(static_cast<std::size_t>(n * d), rng);
  for (Eigen::Index i = 0; i < n * d; ++i) x(i / d, i % d) = v[static_cast<std::size_t>(i)] * static_cast<double>(1 + i % d);
  double ortho = 0.0, prev = INFINITY, full = 0.0;
  bool monotone = true;
  for (std::size_t k = 1; k <= static_cast<std::size_t>(d); ++k) {
    const auto m = pca_fit(x, k);
    const RowMatrixXd gram = m.components * m.components.transpose();
    ortho = std::max(ortho, (gram - RowMatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
    const double err = (pca_reconstruct(m, pca_transform(m, x)) - x).squaredNorm();
    monotone = monotone && err <= prev;
    prev = err;
    full = err;
  }
  return {ortho <= 1e-8 && monotone && full < 1e-16,
          "orthonormality " + sci(ortho) + ", reconstruction " + (monotone ? "non-increasing" : "increases") + " in k"};
}

// ---------------------------------------------------------------------------
// Augmentation

Outcome augment_involutions() {
  std::mt19937_64 rng(16);
  const GrayImage img(24, 20, rand_vec(480, rng, 0.0, 1.0));
  AugmentTransform h, v;
  h.hflip = true;
  v.vflip = true;
  const bool hh = apply_transform(apply_transform(img, h), h) == img;
  const bool vv = apply_transform(apply_transform(img, v), v) == img;
  const bool id = apply_transform(img, AugmentTransform{}) == img;
  return {hh && vv && id, std::string("hflip^2 ") + (hh ? "ok" : "differs") + ", vflip^2 " + (vv ? "ok" : "differs") + ", identity " +
                              (id ? "ok" : "differs")};
}

Outcome augment_draws() {
  const auto pairs = synth_generate(3, 17, 32);
  const AugmentPolicy policy;
  std::mt19937_64 rng(17);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i) % pairs.size()];
    const auto a = augment(p, policy, rng);
    bad += a.label != p.label;
    for (const GrayImage* g : {&a.before, &a.after}) {
      for (double e : g->pixels()) bad += !(e >= 0.0 && e <= 1.0);
    }
  }
  return {bad == 0, std::to_string(bad) + " label or range violations in 1000 draws"};
}

using CheckFn = std::function<Outcome(const VerifyOptions&)>;

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  auto plain = [](Outcome (*f)()) { return CheckFn([f](const VerifyOptions&) { return f(); }); };
  static const std::vector<std::pair<std::string, CheckFn>> checks{
      {"grad.conv2d", plain(grad_conv2d)},
      {"grad.batchnorm", plain(grad_batchnorm)},
      {"grad.linear", plain(grad_linear)},
      {"grad.maxpool", plain(grad_maxpool)},
      {"grad.softmax_cross_entropy", plain(grad_softmax_ce)},
      {"grad.simam", plain(grad_simam)},
      {"grad.bottleneck", plain(grad_bottleneck)},
      {"grad.network", plain(grad_network)},
      {"simam.fixed_point", plain(simam_fixed_point)},
      {"simam.precondition", simam_precondition},
      {"simam.mean_shift", plain(simam_mean_shift)},
      {"simam.weight_range", plain(simam_weight_range)},
      {"resnet.residual_identity", plain(residual_identity)},
      {"resnet.structure", plain(structure)},
      {"metrics.f1_oracle", plain(f1_oracle)},
      {"metrics.f1_degenerate", plain(f1_degenerate)},
      {"features.conv_naive", plain(conv_naive)},
      {"features.hog", plain(hog_invariants)},
      {"features.pca", plain(pca_invariants)},
      {"augment.involutions", plain(augment_involutions)},
      {"augment.random_draws", plain(augment_draws)},
  };
  return checks;
}

}  // namespace

std::vector<std::string> verify_check_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

VerifyReport run_verify(const VerifyOptions& opts, const std::function<void(const CheckResult&)>& on_check) {
  using clock = std::chrono::steady_clock;
  VerifyReport report;
  const auto start = clock::now();
  for (const auto& [name, fn] : registry()) {
    CheckResult r;
    r.name = name;
    const auto t0 = clock::now();
    try {
      const Outcome o = fn(opts);
      r.passed = o.ok;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (on_check) on_check(r);
    report.checks.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  report.over_budget = report.seconds > opts.soft_budget_seconds;
  return report;
}

}  // namespace simres
