#include "dynsfm/autodiff/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynsfm/error.hpp"

namespace dynsfm::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kAbs: return "abs";
    case Op::kTanh: return "tanh";
    case Op::kSoftplus: return "softplus";
    case Op::kMinConst: return "minimum";
    case Op::kMaxConst: return "maximum";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kSoftmax: return "softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSumAll: return "sum_all";
    case Op::kPermute: return "permute";
    case Op::kReshape: return "reshape";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kBroadcast: return "broadcast";
    case Op::kGather: return "gather";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kNonFinite: return "non_finite";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kData: return "data";
  }
  return "unknown";
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorKind::kShapeMismatch,
           "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

/// Row-major strides of `shape` embedded into `out_rank` trailing-aligned
/// axes, with stride 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t lead = out.size() - shape.size();
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[lead + i] = shape[i] == 1 ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// out[i] = f(a[ia], b[ib]) with broadcasting.
template <typename T, typename F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i]);
    return out;
  }
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  auto o = out.mutable_data();
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == out_shape && is_suffix(b.shape(), out_shape)) {
    const std::size_t nb = db.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i % nb]);
    return out;
  }
  if (b.shape() == out_shape && is_suffix(a.shape(), out_shape)) {
    const std::size_t na = da.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i % na], db[i]);
    return out;
  }
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = f(da[ia], db[ib]);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < out_shape[ax]) break;
      ia -= sa[ax] * idx[ax];
      ib -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

/// Sums `g` (of a broadcast shape) down onto `shape`, in index order.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor<T> out(shape);
  auto o = out.mutable_data();
  auto dg = g.data();
  if (is_suffix(shape, g.shape())) {
    const std::size_t n = o.size();
    for (std::size_t i = 0; i < dg.size(); ++i) o[i % n] += dg[i];
    return out;
  }
  const Shape& gs = g.shape();
  const auto so = broadcast_strides(shape, gs);
  const std::size_t rank = gs.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t io = 0;
  for (std::size_t i = 0; i < dg.size(); ++i) {
    o[io] += dg[i];
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      io += so[ax];
      if (idx[ax] < gs[ax]) break;
      io -= so[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <typename T, typename F>
Tensor<T> unary(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(da[i], db[i]);
  return out;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  const std::size_t rank = in.size();
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = s;
    s *= in[i];
  }
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  Tensor<T> out(out_shape);
  auto o = out.mutable_data();
  auto da = a.data();
  if (o.empty()) return out;
  // Innermost output axis is copied in a tight loop.
  const std::size_t last = rank == 0 ? 1 : out_shape[rank - 1];
  const std::size_t last_stride = rank == 0 ? 0 : strides[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  for (std::size_t i = 0; i < o.size(); i += last) {
    for (std::size_t k = 0; k < last; ++k) o[i + k] = da[ia + k * last_stride];
    if (rank < 2) break;
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      ia += strides[ax];
      if (idx[ax] < out_shape[ax]) break;
      ia -= strides[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <typename T>
void accumulate(std::vector<Tensor<T>>& grads, std::vector<bool>& has, std::uint32_t id, Tensor<T> g) {
  if (!has[id]) {
    grads[id] = std::move(g);
    has[id] = true;
    return;
  }
  auto dst = grads[id].mutable_data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

/// C = A * op(B) over a batch. b_batched == false means B is shared.
template <typename T>
void batched_matmul(const T* a, const T* b, T* c, std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, bool b_batched, bool transpose_b) {
  if (!b_batched) {
    MapC<T> A(a, static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(k));
    MapM<T> C(c, static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n));
    if (transpose_b) {
      MapC<T> B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      C.noalias() = A * B.transpose();
    } else {
      MapC<T> B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      C.noalias() = A * B;
    }
    return;
  }
  for (std::size_t bi = 0; bi < batch; ++bi) {
    MapC<T> A(a + bi * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    MapM<T> C(c + bi * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (transpose_b) {
      MapC<T> B(b + bi * n * k, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      C.noalias() = A * B.transpose();
    } else {
      MapC<T> B(b + bi * k * n, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      C.noalias() = A * B;
    }
  }
}

struct MatMulDims {
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool b_batched = false;
  Shape out;
};

MatMulDims matmul_dims(const Shape& a, const Shape& b, bool transpose_b) {
  if (a.size() < 2 || b.size() < 2) {
    fail(ErrorKind::kShapeMismatch, "matmul needs rank >= 2 operands, got " + shape_string(a) +
                                        " and " + shape_string(b));
  }
  MatMulDims d;
  d.m = a[a.size() - 2];
  d.k = a[a.size() - 1];
  const std::size_t bk = transpose_b ? b[b.size() - 1] : b[b.size() - 2];
  d.n = transpose_b ? b[b.size() - 2] : b[b.size() - 1];
  if (bk != d.k) {
    fail(ErrorKind::kShapeMismatch, "matmul inner dimension mismatch: " + shape_string(a) + " x " +
                                        shape_string(b));
  }
  for (std::size_t i = 0; i + 2 < a.size(); ++i) d.batch *= a[i];
  if (b.size() > 2) {
    if (b.size() != a.size() || !std::equal(a.begin(), a.end() - 2, b.begin())) {
      fail(ErrorKind::kShapeMismatch, "matmul batch dimensions differ: " + shape_string(a) + " x " +
                                          shape_string(b));
    }
    d.b_batched = true;
  }
  d.out = a;
  d.out.back() = d.n;
  return d;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

}  // namespace

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(*this);
}

template <typename T>
const Tensor<T>& GradientMap<T>::operator[](Var<T> leaf) const {
  return at(leaf.id());
}

template <typename T>
const Tensor<T>& GradientMap<T>::at(std::uint32_t leaf_id) const {
  auto it = grads_.find(leaf_id);
  if (it == grads_.end()) {
    fail(ErrorKind::kInvalidArgument, "node " + std::to_string(leaf_id) + " is not a leaf");
  }
  return it->second;
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, std::string name) {
  Node<T> n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.name = std::move(name);
  return add_node(std::move(n));
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node<T> n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return add_node(std::move(n));
}

template <typename T>
std::vector<Var<T>> Graph<T>::leaves() {
  std::vector<Var<T>> out;
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::kLeaf) out.push_back(Var<T>(this, i));
  }
  return out;
}

template <typename T>
Var<T> Graph<T>::add_node(Node<T> node) {
  for (auto in : node.inputs) {
    if (in >= nodes_.size()) fail(ErrorKind::kInvalidArgument, "node input refers to a later node");
  }
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(std::move(node));
  try {
    compute(id);
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  return Var<T>(this, id);
}

template <typename T>
const Tensor<T>& Graph<T>::evaluate(const Bindings<T>& bindings, Var<T> root) {
  for (const auto& [leaf, value] : bindings) {
    auto& n = nodes_.at(leaf.id());
    if (n.op != Op::kLeaf) fail(ErrorKind::kInvalidArgument, "binding targets a non-leaf node");
    if (n.value.shape() != value.shape()) {
      fail(ErrorKind::kShapeMismatch, "binding for leaf '" + n.name + "' has shape " +
                                          shape_string(value.shape()) + ", expected " +
                                          shape_string(n.value.shape()));
    }
    n.value = value;
  }
  for (std::uint32_t i = 0; i <= root.id(); ++i) {
    if (nodes_[i].op != Op::kLeaf && nodes_[i].op != Op::kConstant) compute(i);
  }
  return nodes_[root.id()].value;
}

template <typename T>
void Graph<T>::compute(std::uint32_t id) {
  Node<T>& n = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor<T>& { return nodes_[n.inputs[k]].value; };
  const T c = static_cast<T>(n.scalar);
  try {
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd: n.value = broadcast_binary(in(0), in(1), [](T x, T y) { return x + y; }); break;
      case Op::kSub: n.value = broadcast_binary(in(0), in(1), [](T x, T y) { return x - y; }); break;
      case Op::kMul: n.value = broadcast_binary(in(0), in(1), [](T x, T y) { return x * y; }); break;
      case Op::kDiv: n.value = broadcast_binary(in(0), in(1), [](T x, T y) { return x / y; }); break;
      case Op::kNeg: n.value = unary(in(0), [](T x) { return -x; }); break;
      case Op::kExp: n.value = unary(in(0), [](T x) { return std::exp(x); }); break;
      case Op::kLog: n.value = unary(in(0), [](T x) { return std::log(x); }); break;
      case Op::kSqrt: n.value = unary(in(0), [](T x) { return std::sqrt(x); }); break;
      case Op::kAbs: n.value = unary(in(0), [](T x) { return std::abs(x); }); break;
      case Op::kTanh: n.value = unary(in(0), [](T x) { return std::tanh(x); }); break;
      case Op::kSoftplus:
        n.value = unary(in(0), [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); });
        break;
      case Op::kMinConst: n.value = unary(in(0), [c](T x) { return std::min(x, c); }); break;
      case Op::kMaxConst: n.value = unary(in(0), [c](T x) { return std::max(x, c); }); break;
      case Op::kScale: n.value = unary(in(0), [c](T x) { return x * c; }); break;
      case Op::kAddScalar: n.value = unary(in(0), [c](T x) { return x + c; }); break;
      case Op::kMatMul: {
        const auto d = matmul_dims(in(0).shape(), in(1).shape(), n.flag);
        Tensor<T> out(d.out);
        batched_matmul(in(0).data().data(), in(1).data().data(), out.mutable_data().data(), d.batch, d.m,
                       d.k, d.n, d.b_batched, n.flag);
        n.value = std::move(out);
        break;
      }
      case Op::kSoftmax: {
        const auto& a = in(0);
        if (n.axis >= a.rank()) fail(ErrorKind::kShapeMismatch, "softmax axis out of range");
        const auto s = split_at(a.shape(), n.axis);
        Tensor<T> out(a.shape());
        auto o = out.mutable_data();
        auto da = a.data();
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t q = 0; q < s.inner; ++q) {
            const std::size_t base = p * s.len * s.inner + q;
            T mx = da[base];
            for (std::size_t i = 1; i < s.len; ++i) mx = std::max(mx, da[base + i * s.inner]);
            T z = 0;
            for (std::size_t i = 0; i < s.len; ++i) {
              const T e = std::exp(da[base + i * s.inner] - mx);
              o[base + i * s.inner] = e;
              z += e;
            }
            for (std::size_t i = 0; i < s.len; ++i) o[base + i * s.inner] /= z;
          }
        }
        n.value = std::move(out);
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        const auto& a = in(0);
        if (n.axis >= a.rank()) fail(ErrorKind::kShapeMismatch, "reduction axis out of range");
        const auto s = split_at(a.shape(), n.axis);
        Tensor<T> out(reduced_shape(a.shape(), n.axis, n.flag));
        auto o = out.mutable_data();
        auto da = a.data();
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t i = 0; i < s.len; ++i) {
            const T* src = da.data() + (p * s.len + i) * s.inner;
            T* dst = o.data() + p * s.inner;
            for (std::size_t q = 0; q < s.inner; ++q) dst[q] += src[q];
          }
        }
        if (n.op == Op::kMean) {
          const T inv = T(1) / static_cast<T>(s.len);
          for (auto& v : o) v *= inv;
        }
        n.value = std::move(out);
        break;
      }
      case Op::kSumAll: {
        T acc = 0;
        for (auto v : in(0).data()) acc += v;
        n.value = Tensor<T>::scalar(acc);
        break;
      }
      case Op::kPermute: {
        const auto& a = in(0);
        auto sorted = n.indices;
        std::sort(sorted.begin(), sorted.end());
        bool ok = sorted.size() == a.rank();
        for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == i;
        if (!ok) fail(ErrorKind::kShapeMismatch, "invalid permutation for rank " + std::to_string(a.rank()));
        n.value = permute_tensor(a, n.indices);
        break;
      }
      case Op::kReshape:
        if (numel(n.shape_attr) != in(0).size()) {
          fail(ErrorKind::kShapeMismatch, "cannot reshape " + shape_string(in(0).shape()) + " to " +
                                              shape_string(n.shape_attr));
        }
        n.value = in(0).reshaped(n.shape_attr);
        break;
      case Op::kSlice: {
        const auto& a = in(0);
        if (n.axis >= a.rank() || n.begin > n.end || n.end > a.dim(n.axis)) {
          fail(ErrorKind::kShapeMismatch, "slice out of range on " + shape_string(a.shape()));
        }
        const auto s = split_at(a.shape(), n.axis);
        Shape os = a.shape();
        os[n.axis] = n.end - n.begin;
        Tensor<T> out(os);
        auto o = out.mutable_data();
        auto da = a.data();
        const std::size_t chunk = (n.end - n.begin) * s.inner;
        for (std::size_t p = 0; p < s.outer; ++p) {
          std::copy_n(da.data() + (p * s.len + n.begin) * s.inner, chunk, o.data() + p * chunk);
        }
        n.value = std::move(out);
        break;
      }
      case Op::kConcat: {
        const auto& first = in(0);
        if (n.axis >= first.rank()) fail(ErrorKind::kShapeMismatch, "concat axis out of range");
        Shape os = first.shape();
        os[n.axis] = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          Shape sk = in(k).shape();
          Shape s0 = first.shape();
          if (sk.size() != s0.size()) fail(ErrorKind::kShapeMismatch, "concat rank mismatch");
          sk[n.axis] = s0[n.axis] = 0;
          if (sk != s0) {
            fail(ErrorKind::kShapeMismatch, "concat operand " + std::to_string(k) + " has shape " +
                                                shape_string(in(k).shape()));
          }
          os[n.axis] += in(k).dim(n.axis);
        }
        Tensor<T> out(os);
        auto o = out.mutable_data();
        const auto so = split_at(os, n.axis);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& a = in(k);
          const auto s = split_at(a.shape(), n.axis);
          const std::size_t chunk = s.len * s.inner;
          for (std::size_t p = 0; p < s.outer; ++p) {
            std::copy_n(a.data().data() + p * chunk, chunk, o.data() + (p * so.len + offset) * so.inner);
          }
          offset += s.len;
        }
        n.value = std::move(out);
        break;
      }
      case Op::kBroadcast: {
        if (broadcast_shapes(in(0).shape(), n.shape_attr) != n.shape_attr) {
          fail(ErrorKind::kShapeMismatch, "cannot broadcast " + shape_string(in(0).shape()) + " to " +
                                              shape_string(n.shape_attr));
        }
        n.value = broadcast_binary(Tensor<T>::zeros(n.shape_attr), in(0), [](T, T y) { return y; });
        break;
      }
      case Op::kGather: {
        const auto& a = in(0);
        if (n.axis >= a.rank()) fail(ErrorKind::kShapeMismatch, "gather axis out of range");
        const auto s = split_at(a.shape(), n.axis);
        for (auto ix : n.indices) {
          if (ix >= s.len) fail(ErrorKind::kShapeMismatch, "gather index out of range");
        }
        Shape os = a.shape();
        os[n.axis] = n.indices.size();
        Tensor<T> out(os);
        auto o = out.mutable_data();
        auto da = a.data();
        const std::size_t m = n.indices.size();
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(da.data() + (p * s.len + n.indices[i]) * s.inner, s.inner,
                        o.data() + (p * m + i) * s.inner);
          }
        }
        n.value = std::move(out);
        break;
      }
      case Op::kStopGradient:
        n.value = in(0);
        break;
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kShapeMismatch) {
      fail(e.kind(), "node " + std::to_string(id) + " (" + std::string(op_name(n.op)) + "): " + e.what());
    }
    throw;
  }
  if (check_finite_) {
    auto d = n.value.data();
    using Flat = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
    if (Flat(d.data(), static_cast<Eigen::Index>(d.size())).allFinite()) return;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!std::isfinite(d[i])) {
        fail(ErrorKind::kNonFinite, "non-finite value at node " + std::to_string(id) + " (" +
                                        std::string(op_name(n.op)) + ") index " + std::to_string(i));
      }
    }
  }
}

template <typename T>
GradientMap<T> Graph<T>::gradients(Var<T> root) const {
  if (!root.valid() || root.graph() != this) fail(ErrorKind::kInvalidArgument, "root belongs to another graph");
  const auto& rv = nodes_[root.id()].value;
  if (rv.rank() != 0) {
    fail(ErrorKind::kShapeMismatch, "gradient root must be rank 0, got " + shape_string(rv.shape()));
  }
  std::vector<Tensor<T>> grads(root.id() + 1);
  std::vector<bool> has(root.id() + 1, false);
  grads[root.id()] = Tensor<T>::scalar(T(1));
  has[root.id()] = true;

  for (std::uint32_t id = root.id() + 1; id-- > 0;) {
    if (!has[id]) continue;
    const Node<T>& n = nodes_[id];
    const Tensor<T>& g = grads[id];
    auto val = [&](std::size_t k) -> const Tensor<T>& { return nodes_[n.inputs[k]].value; };
    auto push = [&](std::size_t k, Tensor<T> t) { accumulate(grads, has, n.inputs[k], std::move(t)); };
    const T c = static_cast<T>(n.scalar);
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
      case Op::kStopGradient:
        break;
      case Op::kAdd:
        push(0, reduce_to_shape(g, val(0).shape()));
        push(1, reduce_to_shape(g, val(1).shape()));
        break;
      case Op::kSub:
        push(0, reduce_to_shape(g, val(0).shape()));
        push(1, reduce_to_shape(unary(g, [](T x) { return -x; }), val(1).shape()));
        break;
      case Op::kMul:
        push(0, reduce_to_shape(broadcast_binary(g, val(1), [](T x, T y) { return x * y; }), val(0).shape()));
        push(1, reduce_to_shape(broadcast_binary(g, val(0), [](T x, T y) { return x * y; }), val(1).shape()));
        break;
      case Op::kDiv: {
        push(0, reduce_to_shape(broadcast_binary(g, val(1), [](T x, T y) { return x / y; }), val(0).shape()));
        auto t = zip(g, n.value, [](T x, T y) { return -x * y; });
        push(1, reduce_to_shape(broadcast_binary(t, val(1), [](T x, T y) { return x / y; }), val(1).shape()));
        break;
      }
      case Op::kNeg: push(0, unary(g, [](T x) { return -x; })); break;
      case Op::kExp: push(0, zip(g, n.value, [](T x, T y) { return x * y; })); break;
      case Op::kLog: push(0, zip(g, val(0), [](T x, T y) { return x / y; })); break;
      case Op::kSqrt: push(0, zip(g, n.value, [](T x, T y) { return x * T(0.5) / y; })); break;
      case Op::kAbs:
        push(0, zip(g, val(0), [](T x, T y) { return y > 0 ? x : (y < 0 ? -x : T(0)); }));
        break;
      case Op::kTanh: push(0, zip(g, n.value, [](T x, T y) { return x * (T(1) - y * y); })); break;
      case Op::kSoftplus:
        push(0, zip(g, val(0), [](T x, T y) {
               const T e = std::exp(-std::abs(y));
               const T sig = y >= 0 ? T(1) / (T(1) + e) : e / (T(1) + e);
               return x * sig;
             }));
        break;
      case Op::kMinConst: push(0, zip(g, val(0), [c](T x, T y) { return y < c ? x : T(0); })); break;
      case Op::kMaxConst: push(0, zip(g, val(0), [c](T x, T y) { return y > c ? x : T(0); })); break;
      case Op::kScale: push(0, unary(g, [c](T x) { return x * c; })); break;
      case Op::kAddScalar: push(0, g); break;
      case Op::kMatMul: {
        const auto& a = val(0);
        const auto& b = val(1);
        const auto d = matmul_dims(a.shape(), b.shape(), n.flag);
        const auto M = static_cast<Eigen::Index>(d.m);
        const auto K = static_cast<Eigen::Index>(d.k);
        const auto Nn = static_cast<Eigen::Index>(d.n);
        Tensor<T> ga(a.shape());
        Tensor<T> gb(b.shape());
        if (!d.b_batched) {
          const auto BM = static_cast<Eigen::Index>(d.batch * d.m);
          MapC<T> A(a.data().data(), BM, K);
          MapC<T> G(g.data().data(), BM, Nn);
          MapM<T> GA(ga.mutable_data().data(), BM, K);
          if (n.flag) {
            MapC<T> B(b.data().data(), Nn, K);
            MapM<T> GB(gb.mutable_data().data(), Nn, K);
            GA.noalias() = G * B;
            GB.noalias() = G.transpose() * A;
          } else {
            MapC<T> B(b.data().data(), K, Nn);
            MapM<T> GB(gb.mutable_data().data(), K, Nn);
            GA.noalias() = G * B.transpose();
            GB.noalias() = A.transpose() * G;
          }
        } else {
          for (std::size_t bi = 0; bi < d.batch; ++bi) {
            MapC<T> A(a.data().data() + bi * d.m * d.k, M, K);
            MapC<T> G(g.data().data() + bi * d.m * d.n, M, Nn);
            MapM<T> GA(ga.mutable_data().data() + bi * d.m * d.k, M, K);
            if (n.flag) {
              MapC<T> B(b.data().data() + bi * d.n * d.k, Nn, K);
              MapM<T> GB(gb.mutable_data().data() + bi * d.n * d.k, Nn, K);
              GA.noalias() = G * B;
              GB.noalias() = G.transpose() * A;
            } else {
              MapC<T> B(b.data().data() + bi * d.k * d.n, K, Nn);
              MapM<T> GB(gb.mutable_data().data() + bi * d.k * d.n, K, Nn);
              GA.noalias() = G * B.transpose();
              GB.noalias() = A.transpose() * G;
            }
          }
        }
        push(0, std::move(ga));
        push(1, std::move(gb));
        break;
      }
      case Op::kSoftmax: {
        const auto s = split_at(n.value.shape(), n.axis);
        Tensor<T> ga(n.value.shape());
        auto o = ga.mutable_data();
        auto y = n.value.data();
        auto dg = g.data();
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t q = 0; q < s.inner; ++q) {
            const std::size_t base = p * s.len * s.inner + q;
            T dot = 0;
            for (std::size_t i = 0; i < s.len; ++i) dot += dg[base + i * s.inner] * y[base + i * s.inner];
            for (std::size_t i = 0; i < s.len; ++i) {
              const std::size_t k = base + i * s.inner;
              o[k] = y[k] * (dg[k] - dot);
            }
          }
        }
        push(0, std::move(ga));
        break;
      }
      case Op::kSum:
      case Op::kMean: {
        const auto& a = val(0);
        const auto s = split_at(a.shape(), n.axis);
        Tensor<T> ga(a.shape());
        auto o = ga.mutable_data();
        auto dg = g.data();
        const T f = n.op == Op::kMean ? T(1) / static_cast<T>(s.len) : T(1);
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t i = 0; i < s.len; ++i) {
            T* dst = o.data() + (p * s.len + i) * s.inner;
            const T* src = dg.data() + p * s.inner;
            for (std::size_t q = 0; q < s.inner; ++q) dst[q] = src[q] * f;
          }
        }
        push(0, std::move(ga));
        break;
      }
      case Op::kSumAll:
        push(0, Tensor<T>(val(0).shape(), g.item()));
        break;
      case Op::kPermute: {
        std::vector<std::size_t> inv(n.indices.size());
        for (std::size_t i = 0; i < n.indices.size(); ++i) inv[n.indices[i]] = i;
        push(0, permute_tensor(g, inv));
        break;
      }
      case Op::kReshape:
        push(0, g.reshaped(val(0).shape()));
        break;
      case Op::kSlice: {
        const auto& a = val(0);
        const auto s = split_at(a.shape(), n.axis);
        Tensor<T> ga(a.shape());
        auto o = ga.mutable_data();
        const std::size_t chunk = (n.end - n.begin) * s.inner;
        for (std::size_t p = 0; p < s.outer; ++p) {
          std::copy_n(g.data().data() + p * chunk, chunk, o.data() + (p * s.len + n.begin) * s.inner);
        }
        push(0, std::move(ga));
        break;
      }
      case Op::kConcat: {
        const auto so = split_at(n.value.shape(), n.axis);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& a = val(k);
          const auto s = split_at(a.shape(), n.axis);
          Tensor<T> ga(a.shape());
          const std::size_t chunk = s.len * s.inner;
          for (std::size_t p = 0; p < s.outer; ++p) {
            std::copy_n(g.data().data() + (p * so.len + offset) * so.inner, chunk,
                        ga.mutable_data().data() + p * chunk);
          }
          offset += s.len;
          push(k, std::move(ga));
        }
        break;
      }
      case Op::kBroadcast:
        push(0, reduce_to_shape(g, val(0).shape()));
        break;
      case Op::kGather: {
        const auto& a = val(0);
        const auto s = split_at(a.shape(), n.axis);
        Tensor<T> ga(a.shape());
        auto o = ga.mutable_data();
        const std::size_t m = n.indices.size();
        for (std::size_t p = 0; p < s.outer; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            T* dst = o.data() + (p * s.len + n.indices[i]) * s.inner;
            const T* src = g.data().data() + (p * m + i) * s.inner;
            for (std::size_t q = 0; q < s.inner; ++q) dst[q] += src[q];
          }
        }
        push(0, std::move(ga));
        break;
      }
    }
  }

  GradientMap<T> out;
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].op != Op::kLeaf) continue;
    if (id <= root.id() && has[id]) {
      out.grads_.emplace(id, std::move(grads[id]));
    } else {
      out.grads_.emplace(id, Tensor<T>::zeros(nodes_[id].value.shape()));
    }
  }
  return out;
}

// ---- builders --------------------------------------------------------------

namespace {

template <typename T>
Graph<T>& graph_of(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) fail(ErrorKind::kInvalidArgument, "operation on an empty Var");
    if (g && v.graph() != g) fail(ErrorKind::kInvalidArgument, "operands belong to different graphs");
    g = v.graph();
  }
  return *g;
}

template <typename T>
Var<T> make(Op op, std::initializer_list<Var<T>> inputs) {
  Graph<T>& g = graph_of(inputs);
  Node<T> n;
  n.op = op;
  for (const auto& v : inputs) n.inputs.push_back(v.id());
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> make_scalar(Op op, Var<T> a, double c) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = op;
  n.inputs = {a.id()};
  n.scalar = c;
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> make_axis(Op op, Var<T> a, std::size_t axis, bool flag) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = op;
  n.inputs = {a.id()};
  n.axis = axis;
  n.flag = flag;
  return g.add_node(std::move(n));
}

}  // namespace

template <typename T> Var<T> add(Var<T> a, Var<T> b) { return make(Op::kAdd, {a, b}); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return make(Op::kSub, {a, b}); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return make(Op::kMul, {a, b}); }
template <typename T> Var<T> div(Var<T> a, Var<T> b) { return make(Op::kDiv, {a, b}); }
template <typename T> Var<T> neg(Var<T> a) { return make(Op::kNeg, {a}); }
template <typename T> Var<T> exp(Var<T> a) { return make(Op::kExp, {a}); }
template <typename T> Var<T> log(Var<T> a) { return make(Op::kLog, {a}); }
template <typename T> Var<T> sqrt(Var<T> a) { return make(Op::kSqrt, {a}); }
template <typename T> Var<T> abs(Var<T> a) { return make(Op::kAbs, {a}); }
template <typename T> Var<T> tanh(Var<T> a) { return make(Op::kTanh, {a}); }
template <typename T> Var<T> softplus(Var<T> a) { return make(Op::kSoftplus, {a}); }
template <typename T> Var<T> minimum(Var<T> a, double c) { return make_scalar(Op::kMinConst, a, c); }
template <typename T> Var<T> maximum(Var<T> a, double c) { return make_scalar(Op::kMaxConst, a, c); }
template <typename T> Var<T> scale(Var<T> a, double c) { return make_scalar(Op::kScale, a, c); }
template <typename T> Var<T> add_scalar(Var<T> a, double c) { return make_scalar(Op::kAddScalar, a, c); }
template <typename T> Var<T> stop_gradient(Var<T> a) { return make(Op::kStopGradient, {a}); }
template <typename T> Var<T> sum_all(Var<T> a) { return make(Op::kSumAll, {a}); }

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b) {
  Graph<T>& g = graph_of({a, b});
  Node<T> n;
  n.op = Op::kMatMul;
  n.inputs = {a.id(), b.id()};
  n.flag = transpose_b;
  return g.add_node(std::move(n));
}

template <typename T> Var<T> softmax(Var<T> a, std::size_t axis) { return make_axis(Op::kSoftmax, a, axis, false); }
template <typename T> Var<T> sum(Var<T> a, std::size_t axis, bool keepdim) { return make_axis(Op::kSum, a, axis, keepdim); }
template <typename T> Var<T> mean(Var<T> a, std::size_t axis, bool keepdim) { return make_axis(Op::kMean, a, axis, keepdim); }

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = Op::kPermute;
  n.inputs = {a.id()};
  n.indices = std::move(perm);
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = Op::kReshape;
  n.inputs = {a.id()};
  n.shape_attr = std::move(shape);
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = Op::kSlice;
  n.inputs = {a.id()};
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::kInvalidArgument, "concat of zero tensors");
  Graph<T>* g = parts.front().graph();
  Node<T> n;
  n.op = Op::kConcat;
  n.axis = axis;
  for (const auto& p : parts) {
    if (p.graph() != g) fail(ErrorKind::kInvalidArgument, "operands belong to different graphs");
    n.inputs.push_back(p.id());
  }
  return g->add_node(std::move(n));
}

template <typename T>
Var<T> broadcast_to(Var<T> a, Shape shape) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = Op::kBroadcast;
  n.inputs = {a.id()};
  n.shape_attr = std::move(shape);
  return g.add_node(std::move(n));
}

template <typename T>
Var<T> gather(Var<T> a, std::size_t axis, std::vector<std::size_t> indices) {
  Graph<T>& g = graph_of({a});
  Node<T> n;
  n.op = Op::kGather;
  n.inputs = {a.id()};
  n.axis = axis;
  n.indices = std::move(indices);
  return g.add_node(std::move(n));
}

#define DYNSFM_INSTANTIATE(T)                                                           \
  template class Var<T>;                                                                \
  template class Graph<T>;                                                              \
  template class GradientMap<T>;                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> div(Var<T>, Var<T>);                                                  \
  template Var<T> neg(Var<T>);                                                          \
  template Var<T> exp(Var<T>);                                                          \
  template Var<T> log(Var<T>);                                                          \
  template Var<T> sqrt(Var<T>);                                                         \
  template Var<T> abs(Var<T>);                                                          \
  template Var<T> tanh(Var<T>);                                                         \
  template Var<T> softplus(Var<T>);                                                     \
  template Var<T> minimum(Var<T>, double);                                              \
  template Var<T> maximum(Var<T>, double);                                              \
  template Var<T> scale(Var<T>, double);                                                \
  template Var<T> add_scalar(Var<T>, double);                                           \
  template Var<T> matmul(Var<T>, Var<T>, bool);                                         \
  template Var<T> softmax(Var<T>, std::size_t);                                         \
  template Var<T> sum(Var<T>, std::size_t, bool);                                       \
  template Var<T> mean(Var<T>, std::size_t, bool);                                      \
  template Var<T> sum_all(Var<T>);                                                      \
  template Var<T> permute(Var<T>, std::vector<std::size_t>);                            \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);                 \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                      \
  template Var<T> broadcast_to(Var<T>, Shape);                                          \
  template Var<T> gather(Var<T>, std::size_t, std::vector<std::size_t>);                \
  template Var<T> stop_gradient(Var<T>);

DYNSFM_INSTANTIATE(float)
DYNSFM_INSTANTIATE(double)

#undef DYNSFM_INSTANTIATE

}  // namespace dynsfm::ad
