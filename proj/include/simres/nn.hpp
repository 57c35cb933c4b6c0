#pragma once

// Differentiable layers. Each layer is a single fused graph node with a
// hand-written backward rule; grad_check covers all of them in the tests.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "simres/parallel.hpp"
#include "simres/tensor.hpp"

namespace simres {

template <typename Scalar>
struct Conv2dParams {
  Tensor<Scalar> weight;               // [F, C, kh, kw]
  std::optional<Tensor<Scalar>> bias;  // [F]
  int stride = 1;
  int pad = 0;
};

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> gamma;  // [C]
  Tensor<Scalar> beta;   // [C]
  std::vector<Scalar> running_mean;
  std::vector<Scalar> running_var;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);
};

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;  // [out, in]
  Tensor<Scalar> bias;    // [out]
};

/// fn(name, shape, span<Scalar> data, Tensor<Scalar>* param) for both tensors.
template <typename Scalar, typename Fn>
void visit_linear(LinearParams<Scalar>& l, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".weight", l.weight.shape(), l.weight.mutable_values(), &l.weight);
  fn(prefix + ".bias", l.bias.shape(), l.bias.mutable_values(), &l.bias);
}

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, int stride, int pad) {
  const long span = static_cast<long>(in) + 2L * pad - static_cast<long>(kernel);
  if (span < 0) return 0;
  return static_cast<std::size_t>(span / stride + 1);
}

// ---------------------------------------------------------------------------
// Initialisation

/// Kaiming-uniform (fan-in, ReLU gain) conv weights, bound sqrt(6 / fan_in).
template <typename Scalar>
Conv2dParams<Scalar> make_conv(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, int stride, int pad,
                               bool with_bias, std::mt19937_64& rng) {
  const std::size_t fan_in = in_ch * kernel * kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Scalar> w(out_ch * fan_in);
  for (Scalar& v : w) v = static_cast<Scalar>(dist(rng));
  Conv2dParams<Scalar> p;
  p.weight = Tensor<Scalar>({out_ch, in_ch, kernel, kernel}, std::move(w), true);
  if (with_bias) p.bias = Tensor<Scalar>::zeros({out_ch}, true);
  p.stride = stride;
  p.pad = pad;
  return p;
}

template <typename Scalar>
BatchNormParams<Scalar> make_batchnorm(std::size_t channels) {
  BatchNormParams<Scalar> p;
  p.gamma = Tensor<Scalar>::full({channels}, Scalar(1), true);
  p.beta = Tensor<Scalar>::zeros({channels}, true);
  p.running_mean.assign(channels, Scalar(0));
  p.running_var.assign(channels, Scalar(1));
  return p;
}

template <typename Scalar>
LinearParams<Scalar> make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Scalar> w(out * in);
  for (Scalar& v : w) v = static_cast<Scalar>(dist(rng));
  return {Tensor<Scalar>({out, in}, std::move(w), true), Tensor<Scalar>::zeros({out}, true)};
}

// ---------------------------------------------------------------------------
// conv2d: direct cross-correlation lowered to im2col + GEMM per sample.

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, oh, ow;
  int stride, pad;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
  const std::size_t p = g.out_pixels();
  const long s = g.stride, w = static_cast<long>(g.w);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const Scalar* plane = x + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        Scalar* row = cols + ((ch * g.kh + ky) * g.kw + kx) * p;
        const long shift = static_cast<long>(kx) - g.pad;
        // valid ox satisfy 0 <= ox*s + shift < w
        const long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
        const long hi = std::clamp((w - shift + s - 1) / s, lo, static_cast<long>(g.ow));
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * s - g.pad + static_cast<long>(ky);
          Scalar* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + static_cast<std::size_t>(iy) * g.w + shift;
          std::fill(dst, dst + lo, Scalar(0));
          if (s == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
          }
          std::fill(dst + hi, dst + g.ow, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvGeometry& g, Scalar* dx) {
  const std::size_t p = g.out_pixels();
  const long s = g.stride, w = static_cast<long>(g.w);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    Scalar* plane = dx + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const Scalar* row = cols + ((ch * g.kh + ky) * g.kw + kx) * p;
        const long shift = static_cast<long>(kx) - g.pad;
        const long lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
        const long hi = std::clamp((w - shift + s - 1) / s, lo, static_cast<long>(g.ow));
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy) * s - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          Scalar* dst = plane + static_cast<std::size_t>(iy) * g.w + shift;
          const Scalar* src = row + oy * g.ow;
          if (s == 1) {
            amap(dst + lo, static_cast<std::size_t>(hi - lo)) += amap(src + lo, static_cast<std::size_t>(hi - lo));
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Conv2dParams<Scalar>& p) {
  using Index = Eigen::Index;
  const auto& w = p.weight;
  if (x.rank() != 4 || w.rank() != 4) throw TensorError("conv2d: expected [N,C,H,W] input and [F,C,kh,kw] weight");
  if (x.dim(1) != w.dim(1)) {
    throw TensorError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " + std::to_string(w.dim(1)));
  }
  if (p.stride < 1 || p.pad < 0) throw TensorError("conv2d: stride must be >= 1 and pad >= 0");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, p.stride, p.pad};
  g.oh = conv_output_extent(g.h, g.kh, g.stride, g.pad);
  g.ow = conv_output_extent(g.w, g.kw, g.stride, g.pad);
  if (g.oh < 1 || g.ow < 1) throw TensorError("conv2d: output extent < 1 for input " + to_string(x.shape()));
  if (p.bias && (p.bias->rank() != 1 || p.bias->dim(0) != g.f)) throw TensorError("conv2d: bias must be [F]");

  const std::size_t in_sz = g.c * g.h * g.w, out_sz = g.f * g.out_pixels();
  Buffer<Scalar> out(g.n * out_sz);
  const Scalar* xv = x.values().data();
  const Scalar* wv = w.values().data();
  // Row-major [F,P] data read as column-major [P,F]: the pixel extent becomes
  // the tall side of the product, which suits the GEMM kernel better.
  const auto f = static_cast<Index>(g.f), pk = static_cast<Index>(g.patch()), px = static_cast<Index>(g.out_pixels());
  ConstColMap<Scalar> wt(wv, pk, f);
  parallel_for(0, g.n, [&](std::size_t n) {
    ColMap<Scalar> yt(out.data() + n * out_sz, px, f);
    if (g.pointwise()) {
      yt.noalias() = ConstColMap<Scalar>(xv + n * in_sz, px, pk) * wt;
    } else {
      thread_local Buffer<Scalar> scratch;
      scratch.resize(g.patch() * g.out_pixels());
      Scalar* cols = scratch.data();
      detail::im2col(xv + n * in_sz, g, cols);
      yt.noalias() = ConstColMap<Scalar>(cols, px, pk) * wt;
    }
    if (p.bias) {
      for (Index ff = 0; ff < f; ++ff) yt.col(ff).array() += (*p.bias)[static_cast<std::size_t>(ff)];
    }
  });

  Shape shape{g.n, g.f, g.oh, g.ow};
  auto rule = [g, in_sz, out_sz](detail::Node<Scalar>& self) {
    const Scalar* xv = self.inputs[0]->values.data();
    const Scalar* wv = self.inputs[1]->values.data();
    Scalar* dx = detail::grad_of(self, 0);
    Scalar* dw = detail::grad_of(self, 1);
    Scalar* db = self.inputs.size() > 2 ? detail::grad_of(self, 2) : nullptr;
    const auto f = static_cast<Index>(g.f), pk = static_cast<Index>(g.patch()), px = static_cast<Index>(g.out_pixels());
    ConstColMap<Scalar> wt(wv, pk, f);
    const std::size_t wsz = g.f * g.patch();
    // Per-sample weight gradients are summed in sample order afterwards so the
    // result does not depend on the worker count.
    Buffer<Scalar> dw_parts(dw ? g.n * wsz : 0);
    parallel_for(0, g.n, [&](std::size_t n) {
      ConstColMap<Scalar> dyt(self.grad.data() + n * out_sz, px, f);
      thread_local Buffer<Scalar> scratch;
      Scalar* cols = nullptr;
      if (!g.pointwise()) {
        scratch.resize(g.patch() * g.out_pixels());
        cols = scratch.data();
        if (dw) detail::im2col(xv + n * in_sz, g, cols);
      }
      const Scalar* colsv = g.pointwise() ? xv + n * in_sz : cols;
      if (dw) {
        ColMap<Scalar>(dw_parts.data() + n * wsz, pk, f).noalias() = ConstColMap<Scalar>(colsv, px, pk).transpose() * dyt;
      }
      if (dx) {
        if (g.pointwise()) {
          ColMap<Scalar>(dx + n * in_sz, px, pk).noalias() += dyt * wt.transpose();
        } else {
          ColMap<Scalar>(cols, px, pk).noalias() = dyt * wt.transpose();
          detail::col2im_add(cols, g, dx + n * in_sz);
        }
      }
    });
    if (dw) {
      for (std::size_t n = 0; n < g.n; ++n) {
        amap(dw, wsz) += amap(dw_parts.data() + n * wsz, wsz);
      }
    }
    if (db) {
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t ff = 0; ff < g.f; ++ff) {
          db[ff] += detail::ordered_sum(self.grad.data() + n * out_sz + ff * g.out_pixels(), g.out_pixels());
        }
    }
  };
  if (p.bias) return detail::make_result<Scalar>("conv2d", std::move(shape), std::move(out), {&x, &p.weight, &*p.bias}, rule);
  return detail::make_result<Scalar>("conv2d", std::move(shape), std::move(out), {&x, &p.weight}, rule);
}

// ---------------------------------------------------------------------------
// Batch normalisation over (N, H, W) per channel.

namespace detail {

template <typename Scalar>
Tensor<Scalar> batchnorm_impl(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p, Mode mode, bool fuse_relu) {
  if (x.rank() != 4) throw TensorError("batchnorm: expected [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), m = n * hw;
  if (p.gamma.size() != c || p.beta.size() != c || p.running_mean.size() != c || p.running_var.size() != c) {
    throw TensorError("batchnorm: parameter extent does not match " + std::to_string(c) + " channels");
  }
  if (mode == Mode::train && m < 2) throw TensorError("batchnorm: train mode needs at least 2 values per channel");
  if (!(p.eps >= Scalar(0))) throw TensorError("batchnorm: eps must be non-negative");

  const Scalar* xv = x.values().data();
  auto gv = p.gamma.values(), bv = p.beta.values();
  std::vector<Scalar> mean(c), inv_std(c);
  Buffer<Scalar> out(x.size());
  parallel_for(0, c, [&](std::size_t ch) {
    Scalar mu, var;
    if (mode == Mode::train) {
      Scalar s = 0;
      for (std::size_t b = 0; b < n; ++b) s += ordered_sum(xv + (b * c + ch) * hw, hw);
      mu = s / static_cast<Scalar>(m);
      Scalar ss = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const Scalar* src = xv + (b * c + ch) * hw;
        ss += ordered_sum<Scalar>(hw, [src, mu](std::size_t i) { return (src[i] - mu) * (src[i] - mu); });
      }
      var = ss / static_cast<Scalar>(m);
    } else {
      mu = p.running_mean[ch];
      var = p.running_var[ch];
    }
    mean[ch] = mu;
    inv_std[ch] = Scalar(1) / std::sqrt(var + p.eps);
    const Scalar a = gv[ch] * inv_std[ch], shift = bv[ch] - a * mu;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      const Scalar* src = xv + off;
      Scalar* dst = out.data() + off;
      if (fuse_relu) {
        for (std::size_t i = 0; i < hw; ++i) dst[i] = std::max(a * src[i] + shift, Scalar(0));
      } else {
        for (std::size_t i = 0; i < hw; ++i) dst[i] = a * src[i] + shift;
      }
    }
    if (mode == Mode::train) {
      // Running variance tracks the unbiased estimate.
      const Scalar unbiased = var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1);
      p.running_mean[ch] = (Scalar(1) - p.momentum) * p.running_mean[ch] + p.momentum * mu;
      p.running_var[ch] = (Scalar(1) - p.momentum) * p.running_var[ch] + p.momentum * unbiased;
    }
  });

  const bool batch_stats = mode == Mode::train;
  return make_result<Scalar>(
      fuse_relu ? "batchnorm_relu" : "batchnorm", x.shape(), std::move(out), {&x, &p.gamma, &p.beta},
      [n, c, hw, m, batch_stats, fuse_relu, mean = std::move(mean), inv_std = std::move(inv_std)](Node<Scalar>& self) {
        const Scalar* xv = self.inputs[0]->values.data();
        const Scalar* yv = self.values.data();
        const auto& gv = self.inputs[1]->values;
        const Scalar* gy = self.grad.data();
        Scalar* dx = grad_of(self, 0);
        Scalar* dgamma = grad_of(self, 1);
        Scalar* dbeta = grad_of(self, 2);
        parallel_for(0, c, [&](std::size_t ch) {
          const Scalar mu = mean[ch], is = inv_std[ch];
          thread_local Buffer<Scalar> scratch;
          if (fuse_relu) scratch.resize(hw);
          Scalar* masked = scratch.data();
          // the relu mask is applied once per plane into scratch
          auto plane_grad = [=](std::size_t off) -> const Scalar* {
            if (!fuse_relu) return gy + off;
            for (std::size_t i = 0; i < hw; ++i) masked[i] = yv[off + i] > Scalar(0) ? gy[off + i] : Scalar(0);
            return masked;
          };
          Scalar sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            const Scalar* g = plane_grad(off);
            const Scalar* src = xv + off;
            sum_g += ordered_sum(g, hw);
            sum_gx += ordered_sum<Scalar>(hw, [g, src, mu](std::size_t i) { return g[i] * (src[i] - mu); });
          }
          sum_gx *= is;
          if (dgamma) dgamma[ch] += sum_gx;
          if (dbeta) dbeta[ch] += sum_g;
          if (!dx) return;
          const Scalar k = gv[ch] * is;
          const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
          const Scalar cx = is * inv_m * sum_gx, c0 = inv_m * sum_g;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            const Scalar* g = plane_grad(off);
            const Scalar* src = xv + off;
            Scalar* d = dx + off;
            if (batch_stats) {
              for (std::size_t i = 0; i < hw; ++i) d[i] += k * (g[i] - c0 - (src[i] - mu) * cx);
            } else {
              for (std::size_t i = 0; i < hw; ++i) d[i] += k * g[i];
            }
          }
        });
      });
}

}  // namespace detail

/// Batch normalisation over (N, H, W) per channel. Train mode normalises with
/// the batch statistics and updates the running ones; infer mode uses the
/// running statistics only.
template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p, Mode mode) {
  return detail::batchnorm_impl(x, p, mode, false);
}

/// relu(batchnorm(x)) as one node.
template <typename Scalar>
Tensor<Scalar> batchnorm_relu(const Tensor<Scalar>& x, BatchNormParams<Scalar>& p, Mode mode) {
  return detail::batchnorm_impl(x, p, mode, true);
}

// ---------------------------------------------------------------------------
// Pooling

/// 2x2 max pooling with stride 2. Ties route the gradient to the first
/// element of the window in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw TensorError("maxpool2: expected [N,C,H,W]");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw TensorError("maxpool2: spatial extents must be even, got " + to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), oh = h / 2, ow = w / 2;
  Buffer<Scalar> out(planes * oh * ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  auto xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const Scalar* src = xv.data() + pl * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t base = 2 * oy * w + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (src[cand[k]] > src[best]) best = cand[k];
        }
        const std::size_t o = (pl * oh + oy) * ow + ox;
        out[o] = src[best];
        (*argmax)[o] = static_cast<std::uint32_t>(pl * h * w + best);
      }
    }
  }
  return detail::make_result<Scalar>("maxpool2", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                                     [argmax](detail::Node<Scalar>& self) {
                                       if (Scalar* g = detail::grad_of(self, 0)) {
                                         for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*argmax)[o]] += self.grad[o];
                                       }
                                     });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
  if (x.rank() != 4) throw TensorError("global_avg_pool: expected [N,C,H,W]");
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Buffer<Scalar> out(planes);
  auto xv = x.values();
  for (std::size_t pl = 0; pl < planes; ++pl) out[pl] = detail::ordered_sum(xv.data() + pl * hw, hw) / static_cast<Scalar>(hw);
  return detail::make_result<Scalar>("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), {&x},
                                     [planes, hw](detail::Node<Scalar>& self) {
                                       if (Scalar* g = detail::grad_of(self, 0)) {
                                         for (std::size_t pl = 0; pl < planes; ++pl) {
                                           amap(g + pl * hw, hw) += self.grad[pl] / static_cast<Scalar>(hw);
                                         }
                                       }
                                     });
}

// ---------------------------------------------------------------------------
// Fully connected layer and loss

/// x * W^T + b.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const LinearParams<Scalar>& p) {
  using Index = Eigen::Index;
  if (x.rank() != 2 || p.weight.rank() != 2 || x.dim(1) != p.weight.dim(1)) {
    throw TensorError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(p.weight.shape()));
  }
  if (p.bias.size() != p.weight.dim(0)) throw TensorError("linear: bias extent mismatch");
  const auto n = static_cast<Index>(x.dim(0)), in = static_cast<Index>(x.dim(1)), outs = static_cast<Index>(p.weight.dim(0));
  Buffer<Scalar> out(static_cast<std::size_t>(n * outs));
  MatrixMap<Scalar> y(out.data(), n, outs);
  y.noalias() = ConstMatrixMap<Scalar>(x.values().data(), n, in) * ConstMatrixMap<Scalar>(p.weight.values().data(), outs, in).transpose();
  y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(p.bias.values().data(), outs);
  return detail::make_result<Scalar>(
      "linear", {x.dim(0), p.weight.dim(0)}, std::move(out), {&x, &p.weight, &p.bias}, [n, in, outs](detail::Node<Scalar>& self) {
        ConstMatrixMap<Scalar> dy(self.grad.data(), n, outs);
        if (Scalar* g = detail::grad_of(self, 0)) {
          MatrixMap<Scalar>(g, n, in).noalias() += dy * ConstMatrixMap<Scalar>(self.inputs[1]->values.data(), outs, in);
        }
        if (Scalar* g = detail::grad_of(self, 1)) {
          MatrixMap<Scalar>(g, outs, in).noalias() += dy.transpose() * ConstMatrixMap<Scalar>(self.inputs[0]->values.data(), n, in);
        }
        if (Scalar* g = detail::grad_of(self, 2)) {
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(g, outs) += dy.colwise().sum();
        }
      });
}

/// Row-wise softmax with max shift.
template <typename Scalar>
std::vector<Scalar> softmax_rows(std::span<const Scalar> logits, std::size_t rows, std::size_t k) {
  std::vector<Scalar> p(logits.begin(), logits.end());
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar* row = p.data() + r * k;
    const Scalar mx = *std::max_element(row, row + k);
    Scalar z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) row[j] /= z;
  }
  return p;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw TensorError("softmax_cross_entropy: expected [N,K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw TensorError("softmax_cross_entropy: label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw TensorError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
  }
  auto lv = logits.values();
  Scalar total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const Scalar* row = lv.data() + r * k;
    const Scalar mx = *std::max_element(row, row + k);
    Scalar z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += std::log(z) + mx - row[labels[r]];
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return detail::make_result<Scalar>("softmax_cross_entropy", {1}, {total / static_cast<Scalar>(n)}, {&logits},
                                     [n, k, targets = std::move(targets)](detail::Node<Scalar>& self) {
                                       Scalar* g = detail::grad_of(self, 0);
                                       if (!g) return;
                                       auto probs = softmax_rows<Scalar>(self.inputs[0]->values, n, k);
                                       const Scalar s = self.grad[0] / static_cast<Scalar>(n);
                                       for (std::size_t r = 0; r < n; ++r) {
                                         probs[r * k + static_cast<std::size_t>(targets[r])] -= Scalar(1);
                                         for (std::size_t j = 0; j < k; ++j) g[r * k + j] += s * probs[r * k + j];
                                       }
                                     });
}

}  // namespace simres
