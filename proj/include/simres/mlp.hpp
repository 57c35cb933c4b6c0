#pragma once

// Two-layer perceptron head for feature-vector inputs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simres/nn.hpp"
#include "simres/rng.hpp"
#include "simres/tensor.hpp"

namespace simres {

template <typename Scalar>
struct MlpModel {
  using scalar_type = Scalar;
  LinearParams<Scalar> hidden;  // [hidden, in]
  LinearParams<Scalar> out;     // [classes, hidden]

  std::size_t input_dim() const { return hidden.weight.dim(1); }
};

template <typename Scalar>
MlpModel<Scalar> build_mlp(std::size_t input_dim, std::size_t hidden_dim, std::size_t classes, std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || classes < 1) throw TensorError("mlp: dimensions must be >= 1");
  auto rng = make_rng(seed, "mlp.init");
  MlpModel<Scalar> m;
  m.hidden = make_linear<Scalar>(input_dim, hidden_dim, rng);
  m.out = make_linear<Scalar>(hidden_dim, classes, rng);
  return m;
}

/// Class logits [N, classes]; mode is accepted for symmetry with the CNN.
template <typename Scalar>
Tensor<Scalar> forward(MlpModel<Scalar>& m, const Tensor<Scalar>& x, Mode) {
  if (x.rank() != 2 || x.dim(1) != m.input_dim()) {
    throw TensorError("mlp: expected [N," + std::to_string(m.input_dim()) + "] input, got " + to_string(x.shape()));
  }
  return linear(relu(linear(x, m.hidden)), m.out);
}

template <typename Scalar, typename Fn>
void visit_state(MlpModel<Scalar>& m, Fn&& fn) {
  visit_linear(m.hidden, "hidden", fn);
  visit_linear(m.out, "out", fn);
}

template <typename Scalar>
std::vector<Tensor<Scalar>> parameters(MlpModel<Scalar>& m) {
  return {m.hidden.weight, m.hidden.bias, m.out.weight, m.out.bias};
}

}  // namespace simres
