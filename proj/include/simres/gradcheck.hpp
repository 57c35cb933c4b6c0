#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "simres/tensor.hpp"

namespace simres {

struct GradCheckOptions {
  double eps = 1e-4;
  // Coordinates probed per input; 0 probes every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
  // Coordinates whose value lies within this distance of a kink are skipped.
  std::function<bool(std::size_t input, std::size_t coord)> skip;
};

/// Compares the reverse-mode gradient of a scalar-valued f against central
/// differences (f(x+eps) - f(x-eps)) / 2eps. f is re-evaluated after the leaf
/// inputs are perturbed in place, so it must read them (it may also close over
/// other tensors). Returns max |a - n| / max(1, |a|, |n|).
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>()>& f, std::span<Tensor<Scalar>> inputs,
                  const GradCheckOptions& opts = {}) {
  if (!(opts.eps > 0)) throw TensorError("grad_check: eps must be positive");
  for (const auto& in : inputs) {
    if (!in.is_leaf() || !in.requires_grad()) throw TensorError("grad_check: inputs must be leaves requiring grad");
  }
  const Tensor<Scalar> base = f();
  const Scalar reference = base.item();
  if (f().item() != reference) throw TensorError("grad_check: f is not deterministic");
  backward(base);

  std::vector<std::vector<Scalar>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  std::mt19937_64 rng(opts.sample_seed);
  double worst = 0.0;
  const Scalar eps = static_cast<Scalar>(opts.eps);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_input != 0 && coords.size() > opts.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_input);
    }
    for (std::size_t c : coords) {
      if (opts.skip && opts.skip(k, c)) continue;
      const Scalar saved = values[c];
      values[c] = saved + eps;
      const double up = f().item();
      values[c] = saved - eps;
      const double down = f().item();
      values[c] = saved;
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = analytic[k][c];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  if (f().item() != reference) throw TensorError("grad_check: f is not deterministic");
  return worst;
}

}  // namespace simres
