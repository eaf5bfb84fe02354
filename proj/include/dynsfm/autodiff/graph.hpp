#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynsfm/autodiff/tensor.hpp"

namespace dynsfm::ad {

/// Primitive operations understood by the engine. Everything else (layer
/// norm, attention, convolution, rotations) is composed from these.
enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kSqrt,
  kAbs,
  kTanh,
  kSoftplus,
  kMinConst,
  kMaxConst,
  kScale,
  kAddScalar,
  kMatMul,
  kSoftmax,
  kSum,
  kMean,
  kSumAll,
  kPermute,
  kReshape,
  kSlice,
  kConcat,
  kBroadcast,
  kGather,
  kStopGradient,
};

std::string_view op_name(Op op);

template <typename T>
class Graph;

/// Lightweight handle to a node of a Graph. Valid as long as the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Graph<T>* graph() const noexcept { return graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph<T>;
  Var(Graph<T>* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

template <typename T>
struct Node {
  Op op = Op::kLeaf;
  std::vector<std::uint32_t> inputs;
  Tensor<T> value;
  std::string name;

  // Per-op attributes; unused fields stay at their defaults.
  std::size_t axis = 0;
  bool flag = false;
  double scalar = 0.0;
  Shape shape_attr;
  std::vector<std::size_t> indices;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Gradient of a scalar root with respect to every leaf of a graph.
template <typename T>
class GradientMap {
 public:
  const Tensor<T>& operator[](Var<T> leaf) const;
  const Tensor<T>& at(std::uint32_t leaf_id) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Graph<T>;
  std::unordered_map<std::uint32_t, Tensor<T>> grads_;
};

template <typename T>
using Bindings = std::vector<std::pair<Var<T>, Tensor<T>>>;

/// Append-only computation graph. Nodes are evaluated eagerly on creation, so
/// creation order is a valid topological order; evaluate() replays that order
/// against new leaf bindings.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, std::string name = {});
  Var<T> constant(Tensor<T> value);
  Var<T> constant_scalar(T value) { return constant(Tensor<T>::scalar(value)); }

  Var<T> add_node(Node<T> node);

  const Node<T>& node(std::uint32_t id) const { return nodes_.at(id); }
  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::vector<Var<T>> leaves();

  /// Rebinds the given leaves, recomputes every node in order and returns the
  /// value of root. Unlisted leaves keep their current values.
  const Tensor<T>& evaluate(const Bindings<T>& bindings, Var<T> root);

  /// Reverse-mode accumulation from a rank-0 root.
  GradientMap<T> gradients(Var<T> root) const;

  /// Non-finite check on every produced value (on by default).
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  void compute(std::uint32_t id);

  std::vector<Node<T>> nodes_;
  bool check_finite_ = true;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;

// ---- primitive builders --------------------------------------------------

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> neg(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> sqrt(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);
/// Elementwise min(a, c); gradient is zero where a >= c.
template <typename T> Var<T> minimum(Var<T> a, double c);
/// Elementwise max(a, c); gradient is zero where a <= c.
template <typename T> Var<T> maximum(Var<T> a, double c);
template <typename T> Var<T> scale(Var<T> a, double c);
template <typename T> Var<T> add_scalar(Var<T> a, double c);
/// a: [..., m, k]; b: [k, n] or [..., k, n] with matching batch dims. With
/// transpose_b the trailing two axes of b are read as [n, k].
template <typename T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false);
template <typename T> Var<T> softmax(Var<T> a, std::size_t axis);
template <typename T> Var<T> sum(Var<T> a, std::size_t axis, bool keepdim = false);
template <typename T> Var<T> mean(Var<T> a, std::size_t axis, bool keepdim = false);
template <typename T> Var<T> sum_all(Var<T> a);
template <typename T> Var<T> permute(Var<T> a, std::vector<std::size_t> perm);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> broadcast_to(Var<T> a, Shape shape);
template <typename T> Var<T> gather(Var<T> a, std::size_t axis, std::vector<std::size_t> indices);
template <typename T> Var<T> stop_gradient(Var<T> a);

// ---- composites ----------------------------------------------------------

template <typename T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

template <typename T>
Var<T> square(Var<T> a) {
  return mul(a, a);
}

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return neg(a); }
template <typename T> Var<T> operator*(Var<T> a, double c) { return scale(a, c); }
template <typename T> Var<T> operator*(double c, Var<T> a) { return scale(a, c); }
template <typename T> Var<T> operator+(Var<T> a, double c) { return add_scalar(a, c); }
template <typename T> Var<T> operator-(Var<T> a, double c) { return add_scalar(a, -c); }

/// Broadcast shape of two operands under trailing-axis alignment.
Shape broadcast_shapes(const Shape& a, const Shape& b);

}  // namespace dynsfm::ad
