#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "simres/gradcheck.hpp"
#include "simres/nn.hpp"

using namespace simres;
using T = Tensor<double>;

namespace {

Conv2dParams<double> conv_from(std::vector<double> w, Shape shape, std::vector<double> bias, int stride, int pad) {
  Conv2dParams<double> p;
  p.weight = T(std::move(shape), std::move(w), true);
  if (!bias.empty()) {
    const std::size_t f = bias.size();
    p.bias = T({f}, std::move(bias), true);
  }
  p.stride = stride;
  p.pad = pad;
  return p;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  T x({1, 1, 4, 5}, oracle::random_values(20, rng));
  auto y = conv2d(x, conv_from({1.0}, {1, 1, 1, 1}, {0.0}, 1, 0));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, OnesKernel) {
  auto y = conv2d(T::full({1, 1, 3, 3}, 1.0), conv_from(std::vector<double>(9, 1.0), {1, 1, 3, 3}, {}, 1, 0));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.item(), 9.0);
}

TEST(Conv2d, OutputExtent) {
  EXPECT_EQ(conv_output_extent(8, 3, 2, 1), 4u);
  auto y = conv2d(T::zeros({1, 2, 8, 8}), conv_from(std::vector<double>(4 * 2 * 9, 0.1), {4, 2, 3, 3}, {}, 2, 1));
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(conv2d(T::zeros({1, 3, 4, 4}), conv_from(std::vector<double>(18, 0), {1, 2, 3, 3}, {}, 1, 0)), TensorError);
  EXPECT_THROW(conv2d(T::zeros({1, 1, 2, 2}), conv_from(std::vector<double>(9, 0), {1, 1, 3, 3}, {}, 1, 0)), TensorError);
}

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(42);
  struct Case { std::size_t n, c, h, w, f, k; int stride, pad; bool bias; };
  for (const Case& cs : {Case{2, 3, 7, 6, 4, 3, 1, 1, true}, Case{1, 2, 8, 8, 5, 3, 2, 1, false}, Case{3, 4, 5, 5, 2, 1, 1, 0, true},
                         Case{2, 3, 9, 7, 3, 1, 2, 0, false}, Case{1, 2, 11, 10, 2, 7, 2, 3, false}}) {
    auto xv = oracle::random_values(cs.n * cs.c * cs.h * cs.w, rng);
    auto wv = oracle::random_values(cs.f * cs.c * cs.k * cs.k, rng);
    auto bv = cs.bias ? oracle::random_values(cs.f, rng) : std::vector<double>{};
    std::size_t oh, ow;
    auto expect = oracle::conv2d(xv, cs.n, cs.c, cs.h, cs.w, wv, cs.f, cs.k, cs.k, bv, cs.stride, cs.pad, oh, ow);
    auto y = conv2d(T({cs.n, cs.c, cs.h, cs.w}, xv), conv_from(wv, {cs.f, cs.c, cs.k, cs.k}, bv, cs.stride, cs.pad));
    ASSERT_EQ(y.shape(), (Shape{cs.n, cs.f, oh, ow}));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
  }
}

TEST(Conv2d, GradCheck) {
  std::mt19937_64 rng(7);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 0, 1}}) {
    T x({2, 3, 6, 5}, oracle::random_values(180, rng), true);
    auto p = conv_from(oracle::random_values(4 * 3 * k * k, rng), {4, 3, std::size_t(k), std::size_t(k)},
                       oracle::random_values(4, rng), stride, pad);
    T w = p.weight, b = *p.bias;
    std::vector<T> in{x, w, b};
    T r({1}, {0.0});
    auto probe = T({2, 4, conv_output_extent(6, k, stride, pad), conv_output_extent(5, k, stride, pad)},
                   oracle::random_values(2 * 4 * conv_output_extent(6, k, stride, pad) * conv_output_extent(5, k, stride, pad), rng));
    EXPECT_LT(grad_check<double>([&] { return sum(mul(conv2d(x, p), probe)); }, in), 1e-8);
  }
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  auto p = make_batchnorm<double>(2);
  p.beta.mutable_values()[0] = 0.25;
  p.beta.mutable_values()[1] = -1.5;
  std::vector<double> v(2 * 2 * 9);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = ((i / 9) % 2 == 0) ? 3.0 : -7.0;
  auto y = batchnorm(T({2, 2, 3, 3}, v), p, Mode::train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], ((i / 9) % 2 == 0) ? 0.25 : -1.5);
}

TEST(BatchNorm, InferIdentity) {
  auto p = make_batchnorm<double>(1);
  p.eps = 0.0;
  std::mt19937_64 rng(2);
  T x({2, 1, 3, 3}, oracle::random_values(18, rng));
  auto y = batchnorm(x, p, Mode::infer);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(BatchNorm, TwoValueExample) {
  auto p = make_batchnorm<double>(1);
  p.eps = 0.0;
  auto y = batchnorm(T({1, 1, 1, 2}, {1, 3}), p, Mode::train);
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
  // running stats follow momentum with the unbiased variance (2)
  EXPECT_DOUBLE_EQ(p.running_mean[0], 0.2);
  EXPECT_DOUBLE_EQ(p.running_var[0], 0.9 + 0.1 * 2.0);
}

TEST(BatchNorm, NormalisesBatchStatistics) {
  std::mt19937_64 rng(4);
  auto p = make_batchnorm<double>(3);
  p.beta.mutable_values()[1] = 0.7;
  T x({4, 3, 5, 5}, oracle::random_values(300, rng, -3, 8));
  auto y = batchnorm(x, p, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 25; ++i) s += y[(b * 3 + c) * 25 + i];
    const double mu = s / 100;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 25; ++i) ss += std::pow(y[(b * 3 + c) * 25 + i] - mu, 2);
    EXPECT_NEAR(mu, p.beta[c], 1e-12);
    EXPECT_NEAR(ss / 100, 1.0, 1e-3);  // eps-adjusted
  }
}

TEST(BatchNorm, SingleValueChannelInTrainModeFails) {
  auto p = make_batchnorm<double>(1);
  EXPECT_THROW(batchnorm(T({1, 1, 1, 1}, {2}), p, Mode::train), TensorError);
}

TEST(BatchNorm, GradCheckBothModes) {
  std::mt19937_64 rng(8);
  for (Mode mode : {Mode::train, Mode::infer}) {
    auto p = make_batchnorm<double>(3);
    for (double& g : p.gamma.mutable_values()) g = 0.5 + std::uniform_real_distribution<double>(0, 1)(rng);
    for (double& b : p.beta.mutable_values()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    p.running_mean = {0.1, -0.2, 0.3};
    p.running_var = {0.5, 1.5, 2.0};
    T x({2, 3, 3, 4}, oracle::random_values(72, rng), true);
    T probe({2, 3, 3, 4}, oracle::random_values(72, rng));
    std::vector<T> in{x, p.gamma, p.beta};
    EXPECT_LT(grad_check<double>([&] { return sum(mul(batchnorm(x, p, mode), probe)); }, in), 1e-7);
  }
}

TEST(BatchNorm, FusedReluMatchesComposition) {
  std::mt19937_64 rng(12);
  T x({3, 2, 4, 4}, oracle::random_values(96, rng));
  for (Mode mode : {Mode::train, Mode::infer}) {
    auto p = make_batchnorm<double>(2), q = make_batchnorm<double>(2);
    auto ref = relu(batchnorm(x, p, mode));
    auto got = batchnorm_relu(x, q, mode);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(got[i], ref[i]);
    EXPECT_EQ(p.running_var, q.running_var);
  }
}

TEST(BatchNorm, FusedReluGradCheck) {
  std::mt19937_64 rng(13);
  auto p = make_batchnorm<double>(3);
  for (double& b : p.beta.mutable_values()) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  T x({2, 3, 3, 4}, oracle::random_values(72, rng), true);
  T probe({2, 3, 3, 4}, oracle::random_values(72, rng));
  std::vector<T> in{x, p.gamma, p.beta};
  GradCheckOptions opts;
  opts.eps = 1e-6;
  EXPECT_LT(grad_check<double>([&] { return sum(mul(batchnorm_relu(x, p, Mode::train), probe)); }, in, opts), 1e-6);
}

TEST(MaxPool, Values) {
  EXPECT_EQ(maxpool2(T({1, 1, 2, 2}, {1, 2, 3, 4})).item(), 4.0);
  auto c = maxpool2(T::full({1, 2, 4, 6}, 2.5));
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 3}));
  for (double v : c.values()) EXPECT_EQ(v, 2.5);
  EXPECT_THROW(maxpool2(T::zeros({1, 1, 3, 4})), TensorError);
}

TEST(MaxPool, TieRoutesToFirstElement) {
  T x({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  auto y = maxpool2(x);
  EXPECT_EQ(y.item(), 5.0);
  backward(sum(y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, GradCheckTieFree) {
  std::mt19937_64 rng(13);
  std::vector<double> v(2 * 2 * 4 * 4);
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (double& e : v) e *= 0.1;  // gaps of 0.1 >> eps
  T x({2, 2, 4, 4}, v, true);
  T probe({2, 2, 2, 2}, oracle::random_values(16, rng));
  std::vector<T> in{x};
  EXPECT_LT(grad_check<double>([&] { return sum(mul(maxpool2(x), probe)); }, in), 1e-8);
}

TEST(GlobalAvgPool, Values) {
  auto c = global_avg_pool(T::full({2, 3, 4, 4}, 3.0));
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  for (double v : c.values()) EXPECT_EQ(v, 3.0);
  EXPECT_DOUBLE_EQ(global_avg_pool(T({1, 1, 2, 2}, {1, 2, 3, 4})).item(), 2.5);
  EXPECT_EQ(global_avg_pool(T({1, 2, 1, 1}, {7, -1}))[1], -1.0);

  std::mt19937_64 rng(2);
  T x({2, 3, 3, 2}, oracle::random_values(36, rng), true);
  T probe({2, 3}, oracle::random_values(6, rng));
  std::vector<T> in{x};
  EXPECT_LT(grad_check<double>([&] { return sum(mul(global_avg_pool(x), probe)); }, in), 1e-9);
}

TEST(Linear, ValuesAndErrors) {
  LinearParams<double> eye{T({2, 2}, {1, 0, 0, 1}), T({2}, {0, 0})};
  auto y = linear(T({1, 2}, {3, -4}), eye);
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], -4);
  LinearParams<double> p{T({1, 2}, {1, 1}), T({1}, {0.5})};
  EXPECT_DOUBLE_EQ(linear(T({1, 2}, {1, 2}), p).item(), 3.5);
  EXPECT_THROW(linear(T({1, 3}, {1, 2, 3}), p), TensorError);
}

TEST(Linear, GradCheck) {
  std::mt19937_64 rng(21);
  T x({3, 5}, oracle::random_values(15, rng), true);
  LinearParams<double> p{T({4, 5}, oracle::random_values(20, rng), true), T({4}, oracle::random_values(4, rng), true)};
  T probe({3, 4}, oracle::random_values(12, rng));
  std::vector<T> in{x, p.weight, p.bias};
  EXPECT_LT(grad_check<double>([&] { return sum(mul(linear(x, p), probe)); }, in), 1e-9);
}

TEST(SoftmaxCrossEntropy, Values) {
  std::vector<int> y0{0};
  EXPECT_NEAR(softmax_cross_entropy(T({1, 3}, {0.3, 0.3, 0.3}), y0).item(), std::log(3.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(T({1, 3}, {1000, 0, 0}), y0).item(), 0.0, 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(T({1, 2}, {0, std::log(3.0)}), y0).item(), std::log(4.0), 1e-12);
  std::vector<int> bad{3};
  EXPECT_THROW(softmax_cross_entropy(T({1, 3}, {0, 0, 0}), bad), TensorError);
}

TEST(SoftmaxCrossEntropy, GradientRowsSumToZero) {
  std::mt19937_64 rng(17);
  T logits({4, 3}, oracle::random_values(12, rng, -3, 3), true);
  std::vector<int> labels{0, 2, 1, 2};
  backward(softmax_cross_entropy(logits, labels));
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 3; ++c) s += logits.grad()[r * 3 + c];
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
  std::vector<T> in{logits};
  EXPECT_LT(grad_check<double>([&] { return softmax_cross_entropy(logits, labels); }, in), 1e-9);
}
