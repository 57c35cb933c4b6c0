#pragma once

// Parameter-free spatial attention from a closed-form per-neuron energy.
//
// For every sample and channel with M = H*W spatial positions:
//   mu  = mean_t t
//   d_t = (t - mu)^2
//   v   = sum_t d_t / (M - 1)
//   e_t = d_t / (4 (v + lambda)) + 0.5
//   y_t = t * sigmoid(e_t)

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "simres/parallel.hpp"
#include "simres/tensor.hpp"

namespace simres {

enum class SimAMPlacement { per_block_additive, per_block_residual, after_stage2, none };

struct SimAMConfig {
  double lambda = 1e-4;
  SimAMPlacement placement = SimAMPlacement::per_block_additive;

  void validate() const {
    if (!(lambda > 0)) throw TensorError("simam: lambda must be positive");
  }
};

inline std::string_view to_string(SimAMPlacement p) {
  switch (p) {
    case SimAMPlacement::per_block_additive: return "per_block_additive";
    case SimAMPlacement::per_block_residual: return "per_block_residual";
    case SimAMPlacement::after_stage2: return "after_stage2";
    case SimAMPlacement::none: return "none";
  }
  return "none";
}

inline SimAMPlacement parse_placement(std::string_view s) {
  for (auto p : {SimAMPlacement::per_block_additive, SimAMPlacement::per_block_residual, SimAMPlacement::after_stage2,
                 SimAMPlacement::none}) {
    if (to_string(p) == s) return p;
  }
  throw TensorError("simam: unknown placement '" + std::string(s) + "'");
}

namespace detail {

inline void check_simam_input(const Shape& shape, double lambda) {
  if (shape.size() != 4) throw TensorError("simam: expected [N,C,H,W], got " + to_string(shape));
  if (shape[2] * shape[3] < 2) throw TensorError("simam: needs H*W >= 2, got " + to_string(shape));
  if (lambda < 0) throw TensorError("simam: lambda must be non-negative");
}

template <typename Scalar>
struct SimAMPlaneStats {
  Scalar mean;
  Scalar k;  // 1 / (4 (v + lambda))
};

/// Writes sigmoid(e_t) for one plane of m values into w.
template <typename Scalar>
SimAMPlaneStats<Scalar> simam_plane_weights(const Scalar* t, std::size_t m, Scalar lambda, Scalar* w) {
  const Scalar mu = ordered_sum(t, m) / static_cast<Scalar>(m);
  const Scalar v = ordered_sum<Scalar>(m, [t, mu](std::size_t i) { return (t[i] - mu) * (t[i] - mu); }) / static_cast<Scalar>(m - 1);
  const Scalar denom = Scalar(4) * (v + lambda);
  if (!(denom > 0)) throw TensorError("simam: zero-variance channel with lambda = 0");
  const Scalar k = Scalar(1) / denom;
  // energies are >= 0.5 so the plain logistic form cannot overflow
  for (std::size_t i = 0; i < m; ++i) w[i] = (t[i] - mu) * (t[i] - mu) * k + Scalar(0.5);
  logistic_inplace(w, m);
  return {mu, k};
}

/// dx += d(t * w(t))/dt applied to g, for one plane.
template <typename Scalar>
void simam_plane_backward(const Scalar* t, const Scalar* w, const Scalar* g, std::size_t m, SimAMPlaneStats<Scalar> st,
                          Scalar* dx) {
  const Scalar mu = st.mean, k = st.k;
  // a_t = dL/de_t; the variance couples every position through k.
  auto a = [=](std::size_t i) { return g[i] * t[i] * w[i] * (Scalar(1) - w[i]); };
  const Scalar sum_ad = ordered_sum<Scalar>(m, [=](std::size_t i) { return a(i) * (t[i] - mu) * (t[i] - mu); });
  const Scalar sum_a_dev = ordered_sum<Scalar>(m, [=](std::size_t i) { return a(i) * (t[i] - mu); });
  const Scalar shared = Scalar(-4) * k * k * sum_ad / static_cast<Scalar>(m - 1);
  const Scalar centering = Scalar(2) * k * sum_a_dev / static_cast<Scalar>(m);
  for (std::size_t i = 0; i < m; ++i) {
    dx[i] += g[i] * w[i] + Scalar(2) * (t[i] - mu) * (a(i) * k + shared) - centering;
  }
}

}  // namespace detail

/// The attention weights sigmoid(e_t) alone, same shape as x, no graph.
template <typename Scalar>
Tensor<Scalar> simam_weights(const Tensor<Scalar>& x, const SimAMConfig& cfg) {
  detail::check_simam_input(x.shape(), cfg.lambda);
  const std::size_t m = x.dim(2) * x.dim(3);
  std::vector<Scalar> w(x.size());
  parallel_for(0, x.dim(0) * x.dim(1), [&](std::size_t pl) {
    detail::simam_plane_weights(x.values().data() + pl * m, m, static_cast<Scalar>(cfg.lambda), w.data() + pl * m);
  });
  return Tensor<Scalar>(x.shape(), std::move(w));
}

template <typename Scalar>
Tensor<Scalar> simam_forward(const Tensor<Scalar>& x, const SimAMConfig& cfg) {
  detail::check_simam_input(x.shape(), cfg.lambda);
  const std::size_t planes = x.dim(0) * x.dim(1), m = x.dim(2) * x.dim(3);
  const Scalar* xv = x.values().data();
  Buffer<Scalar> weights(x.size()), out(x.size());
  std::vector<detail::SimAMPlaneStats<Scalar>> stats(planes);
  parallel_for(0, planes, [&](std::size_t pl) {
    const std::size_t off = pl * m;
    stats[pl] = detail::simam_plane_weights(xv + off, m, static_cast<Scalar>(cfg.lambda), weights.data() + off);
    for (std::size_t i = 0; i < m; ++i) out[off + i] = xv[off + i] * weights[off + i];
  });
  return detail::make_result<Scalar>(
      "simam", x.shape(), std::move(out), {&x},
      [planes, m, weights = std::move(weights), stats = std::move(stats)](detail::Node<Scalar>& self) {
        Scalar* dx = detail::grad_of(self, 0);
        if (!dx) return;
        const Scalar* xv = self.inputs[0]->values.data();
        parallel_for(0, planes, [&](std::size_t pl) {
          const std::size_t off = pl * m;
          detail::simam_plane_backward(xv + off, weights.data() + off, self.grad.data() + off, m, stats[pl], dx + off);
        });
      });
}

/// Combines a residual branch F with its shortcut x according to placement.
/// after_stage2 behaves as plain F + x here; the stage-level attention is
/// applied by the network forward.
template <typename Scalar>
Tensor<Scalar> apply_placement(const Tensor<Scalar>& branch, const Tensor<Scalar>& shortcut, const SimAMConfig& cfg) {
  if (branch.shape() != shortcut.shape()) {
    throw TensorError("apply_placement: shape mismatch " + to_string(branch.shape()) + " vs " + to_string(shortcut.shape()));
  }
  switch (cfg.placement) {
    case SimAMPlacement::per_block_additive: return add(add(branch, shortcut), simam_forward(shortcut, cfg));
    case SimAMPlacement::per_block_residual: return add(simam_forward(branch, cfg), shortcut);
    case SimAMPlacement::after_stage2:
    case SimAMPlacement::none: return add(branch, shortcut);
  }
  throw TensorError("apply_placement: unknown placement");
}

/// apply_placement followed by an optional relu, as one node. Works plane by
/// plane so the attention statistics, the sums and the activation share a
/// single trip through memory.
template <typename Scalar>
Tensor<Scalar> merge_residual(const Tensor<Scalar>& branch, const Tensor<Scalar>& shortcut, const SimAMConfig& cfg,
                              bool post_relu) {
  if (branch.shape() != shortcut.shape()) {
    throw TensorError("merge_residual: shape mismatch " + to_string(branch.shape()) + " vs " + to_string(shortcut.shape()));
  }
  const SimAMPlacement mode = cfg.placement == SimAMPlacement::after_stage2 ? SimAMPlacement::none : cfg.placement;
  if (mode != SimAMPlacement::none) detail::check_simam_input(branch.shape(), cfg.lambda);
  const std::size_t n = branch.size();
  const std::size_t m = branch.rank() == 4 ? branch.dim(2) * branch.dim(3) : n;
  const std::size_t planes = n / m;
  const Scalar* fv = branch.values().data();
  const Scalar* xv = shortcut.values().data();
  const Scalar lambda = static_cast<Scalar>(cfg.lambda);
  Buffer<Scalar> out(n), weights(mode == SimAMPlacement::none ? 0 : n);
  std::vector<detail::SimAMPlaneStats<Scalar>> stats(mode == SimAMPlacement::none ? 0 : planes);
  parallel_for(0, planes, [&](std::size_t pl) {
    const std::size_t off = pl * m;
    const Scalar *f = fv + off, *x = xv + off;
    Scalar* y = out.data() + off;
    if (mode == SimAMPlacement::none) {
      for (std::size_t i = 0; i < m; ++i) y[i] = f[i] + x[i];
    } else if (mode == SimAMPlacement::per_block_additive) {
      Scalar* w = weights.data() + off;
      stats[pl] = detail::simam_plane_weights(x, m, lambda, w);
      for (std::size_t i = 0; i < m; ++i) y[i] = (f[i] + x[i]) + x[i] * w[i];
    } else {
      Scalar* w = weights.data() + off;
      stats[pl] = detail::simam_plane_weights(f, m, lambda, w);
      for (std::size_t i = 0; i < m; ++i) y[i] = f[i] * w[i] + x[i];
    }
    if (post_relu) {
      for (std::size_t i = 0; i < m; ++i) y[i] = std::max(y[i], Scalar(0));
    }
  });
  return detail::make_result<Scalar>(
      "merge_residual", branch.shape(), std::move(out), {&branch, &shortcut},
      [mode, post_relu, planes, m, weights = std::move(weights), stats = std::move(stats)](detail::Node<Scalar>& self) {
        Scalar* df = detail::grad_of(self, 0);
        Scalar* dx = detail::grad_of(self, 1);
        const Scalar* fv = self.inputs[0]->values.data();
        const Scalar* xv = self.inputs[1]->values.data();
        parallel_for(0, planes, [&](std::size_t pl) {
          const std::size_t off = pl * m;
          thread_local Buffer<Scalar> scratch;
          const Scalar* g = self.grad.data() + off;
          if (post_relu) {
            scratch.resize(m);
            Scalar* masked = scratch.data();
            const Scalar* y = self.values.data() + off;
            for (std::size_t i = 0; i < m; ++i) masked[i] = y[i] > Scalar(0) ? g[i] : Scalar(0);
            g = masked;
          }
          const Scalar* w = weights.empty() ? nullptr : weights.data() + off;
          if (df) {
            if (mode == SimAMPlacement::per_block_residual) {
              detail::simam_plane_backward(fv + off, w, g, m, stats[pl], df + off);
            } else {
              for (std::size_t i = 0; i < m; ++i) df[off + i] += g[i];
            }
          }
          if (dx) {
            for (std::size_t i = 0; i < m; ++i) dx[off + i] += g[i];
            if (mode == SimAMPlacement::per_block_additive) detail::simam_plane_backward(xv + off, w, g, m, stats[pl], dx + off);
          }
        });
      });
}

}  // namespace simres
