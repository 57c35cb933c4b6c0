#pragma once

// Dense real tensor with a dynamic reverse-mode autodiff graph.
//
// A Tensor is a cheap handle onto an immutable node. Ops allocate a new node,
// and when any input requires a gradient the node keeps references to its
// inputs together with a backward rule. backward() walks the graph reachable
// from a scalar loss once, in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "simres/errors.hpp"

namespace simres {

using Shape = std::vector<std::size_t>;

/// Allocator that leaves scalars uninitialised on resize; op outputs are
/// always fully written before use.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  // 64-byte starts keep vectorised kernels on the same path from run to run
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{64}); }
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename Scalar>
using Buffer = std::vector<Scalar, DefaultInitAllocator<Scalar>>;

template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

template <typename Scalar>
ArrayMap<Scalar> amap(Scalar* data, std::size_t n) {
  return ArrayMap<Scalar>(data, static_cast<Eigen::Index>(n));
}
template <typename Scalar>
ConstArrayMap<Scalar> amap(const Scalar* data, std::size_t n) {
  return ConstArrayMap<Scalar>(data, static_cast<Eigen::Index>(n));
}

namespace detail {

/// Sum of f(0..n-1) in an order that depends only on n, never on where the
/// data sits in memory. Sixteen independent lanes let the compiler vectorise.
template <typename Scalar, typename F>
Scalar ordered_sum(std::size_t n, F&& f) {
  constexpr std::size_t lanes = 16;
  Scalar acc[lanes] = {};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::size_t j = 0; j < lanes; ++j) acc[j] += f(i + j);
  }
  Scalar tail = 0;
  for (; i < n; ++i) tail += f(i);
  for (std::size_t width = lanes / 2; width > 0; width /= 2) {
    for (std::size_t j = 0; j < width; ++j) acc[j] += acc[j + width];
  }
  return acc[0] + tail;
}

template <typename Scalar>
Scalar ordered_sum(const Scalar* p, std::size_t n) {
  return ordered_sum<Scalar>(n, [p](std::size_t i) { return p[i]; });
}

/// p[i] = 1 / (1 + exp(-p[i])), computed in fixed aligned blocks so every
/// element takes the same (packet) code path wherever it lives.
template <typename Scalar>
void logistic_inplace(Scalar* p, std::size_t n) {
  constexpr int block = 32;
  Eigen::Array<Scalar, block, 1> tmp;
  for (std::size_t i = 0; i < n; i += block) {
    const std::size_t len = std::min<std::size_t>(block, n - i);
    tmp.setZero();
    std::copy(p + i, p + i + len, tmp.data());
    tmp = Scalar(1) / (Scalar(1) + (-tmp).exp());
    std::copy(tmp.data(), tmp.data() + len, p + i);
  }
}

}  // namespace detail

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

enum class Mode { train, infer };

template <typename Scalar>
class Tensor;

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> values;
  Buffer<Scalar> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward_rule;

  bool is_leaf() const { return inputs.empty() && !backward_rule && !consumed; }
};

template <typename Scalar>
void check_finite(std::span<const Scalar> values, const char* op) {
  // x * 0 is NaN exactly when x is NaN or infinite.
  const Scalar probe = (amap(values.data(), values.size()) * Scalar(0)).sum();
  if (probe != Scalar(0)) throw TensorError(std::string(op) + ": non-finite value produced");
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw TensorError("tensor: shape must have at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) throw TensorError("tensor: zero extent in shape " + to_string(shape));
  }
}

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() = default;

  /// Validated construction: extents >= 1, matching length, finite data.
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false) {
    detail::check_shape(shape);
    if (numel(shape) != values.size()) {
      throw TensorError("tensor: length mismatch, shape " + to_string(shape) + " needs " +
                        std::to_string(numel(shape)) + " values, got " + std::to_string(values.size()));
    }
    detail::check_finite<Scalar>(values, "tensor");
    node_ = std::make_shared<detail::Node<Scalar>>();
    node_->shape = std::move(shape);
    node_->values.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Scalar(0), requires_grad);
  }
  static Tensor scalar(Scalar value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->values.size(); }

  std::span<const Scalar> values() const { return node_->values; }
  Scalar operator[](std::size_t i) const { return node_->values[i]; }
  Scalar item() const {
    if (size() != 1) throw TensorError("item: tensor has " + std::to_string(size()) + " elements");
    return node_->values[0];
  }

  /// In-place access for parameter leaves (optimizer steps, gradient probes).
  std::span<Scalar> mutable_values() {
    if (!node_->is_leaf()) throw TensorError("mutable_values: only leaf tensors may be modified");
    return node_->values;
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  /// Copy of the data with no graph history.
  Tensor detach() const { return Tensor(shape(), std::vector<Scalar>(node_->values.begin(), node_->values.end()), false); }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  NodePtr node_;
};

namespace detail {

template <typename Scalar>
using BackwardRule = std::function<void(Node<Scalar>&)>;

/// Wraps op output; records inputs and backward rule when any input needs a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, Shape shape, Buffer<Scalar> values,
                           std::initializer_list<const Tensor<Scalar>*> inputs, BackwardRule<Scalar> rule) {
  check_finite<Scalar>(values, op);
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool needs = false;
  for (const Tensor<Scalar>* in : inputs) needs = needs || in->requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const Tensor<Scalar>* in : inputs) node->inputs.push_back(in->node());
    node->backward_rule = std::move(rule);
  }
  return Tensor<Scalar>::from_node(std::move(node));
}

/// Gradient buffer of an input if it participates in backward, else nullptr.
template <typename Scalar>
Scalar* grad_of(Node<Scalar>& self, std::size_t input) {
  Node<Scalar>& in = *self.inputs[input];
  return in.requires_grad ? in.grad.data() : nullptr;
}

}  // namespace detail

/// Runs reverse-mode differentiation from a scalar loss. Every node reached,
/// leaves included, ends with grad = d loss / d node; fan-out accumulates.
/// A graph can be traversed only once.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  using detail::Node;
  if (loss.size() != 1) throw TensorError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  Node<Scalar>* root = loss.node().get();
  if (root->consumed) throw TensorError("backward: graph already traversed; run a new forward pass");
  if (!root->requires_grad) throw TensorError("backward: loss does not depend on any tensor requiring grad");

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<Scalar>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<Scalar>* n : order) n->grad.assign(n->values.size(), Scalar(0));
  root->grad[0] = Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward_rule) n->backward_rule(*n);
  }
  for (Node<Scalar>* n : order) {
    if (n->is_leaf()) continue;
    n->consumed = true;
    n->backward_rule = nullptr;
    n->inputs.clear();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

enum class EwOp { add, sub, mul, scale, relu, sigmoid };

namespace detail {
template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}
}  // namespace detail

namespace detail {

template <typename Scalar>
ConstArrayMap<Scalar> values_of(const Tensor<Scalar>& t) {
  return amap(t.values().data(), t.size());
}

template <typename Scalar>
ConstArrayMap<Scalar> grad_map(const Node<Scalar>& self) {
  return amap(self.grad.data(), self.grad.size());
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a) + detail::values_of(b);
  return detail::make_result<Scalar>("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node<Scalar>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Scalar* g = detail::grad_of(self, k)) amap(g, self.grad.size()) += detail::grad_map(self);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a) - detail::values_of(b);
  return detail::make_result<Scalar>("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) amap(g, self.grad.size()) += detail::grad_map(self);
    if (Scalar* g = detail::grad_of(self, 1)) amap(g, self.grad.size()) -= detail::grad_map(self);
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a) * detail::values_of(b);
  return detail::make_result<Scalar>("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node<Scalar>& self) {
    const std::size_t n = self.grad.size();
    if (Scalar* g = detail::grad_of(self, 0)) amap(g, n) += detail::grad_map(self) * amap(self.inputs[1]->values.data(), n);
    if (Scalar* g = detail::grad_of(self, 1)) amap(g, n) += detail::grad_map(self) * amap(self.inputs[0]->values.data(), n);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a) * s;
  return detail::make_result<Scalar>("scale", a.shape(), std::move(out), {&a}, [s](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) amap(g, self.grad.size()) += detail::grad_map(self) * s;
  });
}

/// Adds a scalar to every element.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, Scalar s) {
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a) + s;
  return detail::make_result<Scalar>("add", a.shape(), std::move(out), {&a}, [](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) amap(g, self.grad.size()) += detail::grad_map(self);
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, Scalar s) {
  return add(a, -s);
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, Scalar s) {
  return scale(a, s);
}

/// max(x, 0); the gradient at exactly 0 is 0.
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Buffer<Scalar> out(a.size());
  amap(out.data(), out.size()) = detail::values_of(a).max(Scalar(0));
  return detail::make_result<Scalar>("relu", a.shape(), std::move(out), {&a}, [](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) {
      const std::size_t n = self.grad.size();
      amap(g, n) += (amap(self.inputs[0]->values.data(), n) > Scalar(0)).select(detail::grad_map(self), Scalar(0));
    }
  });
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  Buffer<Scalar> out(a.size());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(av[i]);
  return detail::make_result<Scalar>("sigmoid", a.shape(), std::move(out), {&a}, [](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) {
      auto y = amap(self.values.data(), self.values.size());
      amap(g, self.grad.size()) += detail::grad_map(self) * y * (Scalar(1) - y);
    }
  });
}

/// Dispatching form for the binary ops.
template <typename Scalar>
Tensor<Scalar> ew(EwOp op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  switch (op) {
    case EwOp::add: return add(a, b);
    case EwOp::sub: return sub(a, b);
    case EwOp::mul: return mul(a, b);
    default: throw TensorError("ew: operation needs a scalar operand or is unary");
  }
}

/// Dispatching form for scalar-operand and unary ops (b is ignored for relu/sigmoid).
template <typename Scalar>
Tensor<Scalar> ew(EwOp op, const Tensor<Scalar>& a, Scalar b = Scalar(0)) {
  switch (op) {
    case EwOp::add: return add(a, b);
    case EwOp::sub: return sub(a, b);
    case EwOp::mul:
    case EwOp::scale: return scale(a, b);
    case EwOp::relu: return relu(a);
    case EwOp::sigmoid: return sigmoid(a);
  }
  throw TensorError("ew: unknown op");
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ColMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using ConstColMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>;

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw TensorError("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Buffer<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap<Scalar>(out.data(), m, n).noalias() =
      ConstMatrixMap<Scalar>(a.values().data(), m, k) * ConstMatrixMap<Scalar>(b.values().data(), k, n);
  return detail::make_result<Scalar>(
      "matmul", {a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [m, k, n](detail::Node<Scalar>& self) {
        ConstMatrixMap<Scalar> dy(self.grad.data(), m, n);
        if (Scalar* g = detail::grad_of(self, 0)) {
          ConstMatrixMap<Scalar> bm(self.inputs[1]->values.data(), k, n);
          MatrixMap<Scalar>(g, m, k).noalias() += dy * bm.transpose();
        }
        if (Scalar* g = detail::grad_of(self, 1)) {
          ConstMatrixMap<Scalar> am(self.inputs[0]->values.data(), m, k);
          MatrixMap<Scalar>(g, k, n).noalias() += am.transpose() * dy;
        }
      });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  detail::check_shape(shape);
  if (numel(shape) != a.size()) {
    throw TensorError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Buffer<Scalar> out(a.values().begin(), a.values().end());
  return detail::make_result<Scalar>("reshape", std::move(shape), std::move(out), {&a}, [](detail::Node<Scalar>& self) {
    if (Scalar* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Concatenates two [n, *] matrices along the column axis.
template <typename Scalar>
Tensor<Scalar> concat_columns(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw TensorError("concat_columns: incompatible shapes " + to_string(a.shape()) + ", " + to_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Buffer<Scalar> out(rows * (ca + cb));
  auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, out.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, out.begin() + r * (ca + cb) + ca);
  }
  return detail::make_result<Scalar>(
      "concat_columns", {rows, ca + cb}, std::move(out), {&a, &b}, [rows, ca, cb](detail::Node<Scalar>& self) {
        if (Scalar* g = detail::grad_of(self, 0)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += self.grad[r * (ca + cb) + c];
        }
        if (Scalar* g = detail::grad_of(self, 1)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += self.grad[r * (ca + cb) + ca + c];
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions. Reduced axes are kept with extent 1.

enum class ReduceOp { sum, mean, var_pop, var_sample };

namespace detail {

struct ReducePlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // output slot for every input element
  std::size_t group = 1;               // elements folded into each output
};

inline ReducePlan plan_reduce(const Shape& shape, const std::vector<std::size_t>& axes) {
  std::vector<bool> reduced(shape.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) throw TensorError("reduce: axis " + std::to_string(ax) + " out of range for " + to_string(shape));
    reduced[ax] = true;
  }
  ReducePlan plan;
  plan.out_shape = shape;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) {
      plan.group *= shape[d];
      plan.out_shape[d] = 1;
    }
  }
  std::vector<std::size_t> out_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    out_stride[d] = reduced[d] ? 0 : stride;
    stride *= plan.out_shape[d];
  }
  const std::size_t total = numel(shape);
  plan.out_index.resize(total);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < total; ++i) {
    plan.out_index[i] = offset;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++idx[d];
      offset += out_stride[d];
      if (idx[d] < shape[d]) break;
      offset -= out_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> reduce(ReduceOp op, const Tensor<Scalar>& t, const std::vector<std::size_t>& axes) {
  auto plan = std::make_shared<detail::ReducePlan>(detail::plan_reduce(t.shape(), axes));
  const std::size_t m = plan->group;
  if (op == ReduceOp::var_sample && m < 2) throw TensorError("reduce: var_sample needs more than one element per group");
  const std::size_t outs = numel(plan->out_shape);
  auto x = t.values();
  Buffer<Scalar> sums(outs, Scalar(0));
  for (std::size_t i = 0; i < x.size(); ++i) sums[plan->out_index[i]] += x[i];
  if (op == ReduceOp::sum) {
    return detail::make_result<Scalar>("reduce", plan->out_shape, std::move(sums), {&t}, [plan](detail::Node<Scalar>& self) {
      if (Scalar* g = detail::grad_of(self, 0)) {
        for (std::size_t i = 0; i < plan->out_index.size(); ++i) g[i] += self.grad[plan->out_index[i]];
      }
    });
  }
  Buffer<Scalar> means(outs);
  for (std::size_t o = 0; o < outs; ++o) means[o] = sums[o] / static_cast<Scalar>(m);
  if (op == ReduceOp::mean) {
    return detail::make_result<Scalar>("reduce", plan->out_shape, std::move(means), {&t}, [plan, m](detail::Node<Scalar>& self) {
      if (Scalar* g = detail::grad_of(self, 0)) {
        for (std::size_t i = 0; i < plan->out_index.size(); ++i) g[i] += self.grad[plan->out_index[i]] / static_cast<Scalar>(m);
      }
    });
  }
  const Scalar divisor = static_cast<Scalar>(op == ReduceOp::var_pop ? m : m - 1);
  Buffer<Scalar> var(outs, Scalar(0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Scalar d = x[i] - means[plan->out_index[i]];
    var[plan->out_index[i]] += d * d;
  }
  for (Scalar& v : var) v /= divisor;
  return detail::make_result<Scalar>(
      "reduce", plan->out_shape, std::move(var), {&t},
      [plan, divisor, means = std::move(means)](detail::Node<Scalar>& self) {
        if (Scalar* g = detail::grad_of(self, 0)) {
          const auto& xv = self.inputs[0]->values;
          for (std::size_t i = 0; i < xv.size(); ++i) {
            const std::size_t o = plan->out_index[i];
            g[i] += self.grad[o] * Scalar(2) * (xv[i] - means[o]) / divisor;
          }
        }
      });
}

template <typename Scalar>
std::vector<std::size_t> all_axes(const Tensor<Scalar>& t) {
  std::vector<std::size_t> axes(t.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return axes;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& t, const std::vector<std::size_t>& axes) { return reduce(ReduceOp::sum, t, axes); }
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& t) { return reduce(ReduceOp::sum, t, all_axes(t)); }
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& t, const std::vector<std::size_t>& axes) { return reduce(ReduceOp::mean, t, axes); }
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& t) { return reduce(ReduceOp::mean, t, all_axes(t)); }
template <typename Scalar>
Tensor<Scalar> var_pop(const Tensor<Scalar>& t, const std::vector<std::size_t>& axes) { return reduce(ReduceOp::var_pop, t, axes); }
template <typename Scalar>
Tensor<Scalar> var_sample(const Tensor<Scalar>& t, const std::vector<std::size_t>& axes) { return reduce(ReduceOp::var_sample, t, axes); }

}  // namespace simres
