#pragma once

// Dense tensors with taped reverse-mode differentiation.
//
// A tensor is a handle to a graph node holding an Eigen row-major matrix.
// Rank-0 tensors are stored as 1x1, rank-1 tensors of length n as 1xn. Every
// op below records its inputs and a backward closure when any input requires
// a gradient; `backward(loss)` replays the closures in reverse topological
// order and then releases the graph.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stsx/errors.hpp"

namespace stsx {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Mat<double>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

template <typename Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;  // empty until something is accumulated
  Shape shape;
  std::string_view op = "leaf";
  bool leaf = true;
  bool requires_grad = false;
  bool finite = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

inline thread_local bool grad_recording = true;

template <typename Scalar>
void accumulate(Node<Scalar>& node, const Mat<Scalar>& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

inline Shape matrix_shape(Index rows, Index cols) { return {rows, cols}; }

}  // namespace detail

template <typename Scalar>
class BasicTensor {
 public:
  using NodeType = detail::Node<Scalar>;

  BasicTensor() = default;

  /// Wraps a matrix as a rank-2 leaf.
  explicit BasicTensor(Mat<Scalar> value, bool requires_grad = false)
      : BasicTensor(std::move(value), Shape{}, requires_grad, /*infer_shape=*/true) {}

  /// Leaf with an explicit shape; `value` must hold product(shape) entries laid
  /// out as described at the top of this file.
  BasicTensor(Mat<Scalar> value, Shape shape, bool requires_grad)
      : BasicTensor(std::move(value), std::move(shape), requires_grad, false) {}

  static BasicTensor scalar(Scalar s, bool requires_grad = false) {
    Mat<Scalar> m(1, 1);
    m(0, 0) = s;
    return BasicTensor(std::move(m), Shape{}, requires_grad);
  }

  static BasicTensor vector(std::span<const Scalar> values, bool requires_grad = false) {
    Mat<Scalar> m(1, static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Index>(i)) = values[i];
    return BasicTensor(std::move(m), Shape{static_cast<Index>(values.size())}, requires_grad);
  }

  static BasicTensor vector(std::initializer_list<Scalar> values, bool requires_grad = false) {
    return vector(std::span<const Scalar>(values.begin(), values.size()), requires_grad);
  }

  static BasicTensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return BasicTensor(Mat<Scalar>::Zero(rows, cols), requires_grad);
  }

  static BasicTensor from_node(std::shared_ptr<NodeType> node) {
    BasicTensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Mat<Scalar>& value() const { return node_->value; }

  /// Direct write access, only for leaves (optimizers, checkpoint loading).
  Mat<Scalar>& mutable_value() {
    if (!node_->leaf) throw ContractError("mutable_value() on a non-leaf tensor");
    return node_->value;
  }

  bool has_grad() const { return node_->grad.size() != 0; }

  /// Gradient, or zeros of the value's size when nothing was accumulated.
  Mat<Scalar> grad() const {
    if (has_grad()) return node_->grad;
    return Mat<Scalar>::Zero(node_->value.rows(), node_->value.cols());
  }

  void zero_grad() { node_->grad.resize(0, 0); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::string_view op() const { return node_->op; }

  Scalar item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value(0, 0);
  }

  Scalar operator()(Index r, Index c) const { return node_->value(r, c); }

  BasicTensor detach() const { return BasicTensor(node_->value, node_->shape, false); }

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  BasicTensor(Mat<Scalar> value, Shape shape, bool requires_grad, bool infer_shape)
      : node_(std::make_shared<NodeType>()) {
    if (infer_shape) shape = {value.rows(), value.cols()};
    Index n = 1;
    for (Index d : shape) n *= d;
    if (n != value.size()) {
      throw DimensionError("shape " + shape_string(shape) + " does not match " +
                           std::to_string(value.size()) + " values");
    }
    if (shape.size() > 2) throw DimensionError("tensors of rank > 2 are not supported");
    node_->finite = value.allFinite();
    node_->value = std::move(value);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<double>;

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds the result node of a differentiable op. Public so that fused ops
/// (losses, model-specific kernels) can live outside this header.
template <typename Scalar>
BasicTensor<Scalar> make_op(std::string_view name, Mat<Scalar> value, Shape shape,
                            std::vector<BasicTensor<Scalar>> inputs,
                            std::function<void(detail::Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->op = name;
  node->leaf = false;
  node->finite = value.allFinite();
  bool inputs_finite = true;
  bool any_grad = false;
  for (const auto& in : inputs) {
    inputs_finite = inputs_finite && in.node()->finite;
    any_grad = any_grad || in.requires_grad();
    if (in.node()->consumed) {
      throw ContractError(std::string(name) + ": input belongs to a graph already consumed by backward");
    }
  }
  if (inputs_finite && !node->finite) {
    throw NumericError(std::string(name) + " produced a non-finite value from finite inputs");
  }
  node->value = std::move(value);
  node->shape = std::move(shape);
  node->requires_grad = any_grad && detail::grad_recording;
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return BasicTensor<Scalar>::from_node(std::move(node));
}

// ---------------------------------------------------------------------------
// Graph traversal

/// Topologically ordered view of the graph reachable from a root tensor.
template <typename Scalar>
class ComputeGraph {
 public:
  using NodeType = detail::Node<Scalar>;

  explicit ComputeGraph(const BasicTensor<Scalar>& root) : root_(root.node()) {
    // Iterative post-order DFS; input order fixes the traversal order.
    std::unordered_set<const NodeType*> seen;
    std::vector<std::pair<NodeType*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        NodeType* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  /// Op names, inputs before consumers.
  std::vector<std::string_view> ops() const {
    std::vector<std::string_view> names;
    names.reserve(order_.size());
    for (const auto* n : order_) names.push_back(n->op);
    return names;
  }

  std::size_t size() const { return order_.size(); }

  void backward() {
    if (root_->value.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_string(root_->shape));
    }
    for (const auto* n : order_) {
      if (n->consumed) throw ContractError("backward() called twice without a new forward pass");
    }
    if (!root_->requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");

    detail::accumulate(*root_, Mat<Scalar>(Mat<Scalar>::Ones(1, 1)));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      NodeType* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
    for (NodeType* n : order_) {
      if (n->leaf) continue;
      n->consumed = true;
      n->backward = nullptr;
      n->inputs.clear();
      n->grad.resize(0, 0);
    }
  }

 private:
  std::shared_ptr<NodeType> root_;
  std::vector<NodeType*> order_;
};

template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  ComputeGraph<Scalar>(loss).backward();
}

// ---------------------------------------------------------------------------
// Ops

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Mat<Scalar> out = a.value() * b.value();
  return make_op<Scalar>("matmul", std::move(out), {a.rows(), b.cols()}, {a, b},
                         [](detail::Node<Scalar>& self) {
                           auto& A = *self.inputs[0];
                           auto& B = *self.inputs[1];
                           if (A.requires_grad) detail::accumulate(A, Mat<Scalar>(self.grad * B.value.transpose()));
                           if (B.requires_grad) detail::accumulate(B, Mat<Scalar>(A.value.transpose() * self.grad));
                         });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& x) {
  Mat<Scalar> out = x.value().transpose();
  return make_op<Scalar>("transpose", std::move(out), {x.cols(), x.rows()}, {x},
                         [](detail::Node<Scalar>& self) {
                           detail::accumulate(*self.inputs[0], Mat<Scalar>(self.grad.transpose()));
                         });
}

namespace detail {
template <typename Scalar>
void require_same_shape(std::string_view op, const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}
}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  Mat<Scalar> out = a.value() + b.value();
  return make_op<Scalar>("add", std::move(out), a.shape(), {a, b}, [](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    detail::accumulate(*self.inputs[1], self.grad);
  });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  Mat<Scalar> out = a.value() - b.value();
  return make_op<Scalar>("sub", std::move(out), a.shape(), {a, b}, [](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    detail::accumulate(*self.inputs[1], Mat<Scalar>(-self.grad));
  });
}

/// Elementwise product.
template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same_shape("hadamard", a, b);
  Mat<Scalar> out = a.value().cwiseProduct(b.value());
  return make_op<Scalar>("hadamard", std::move(out), a.shape(), {a, b}, [](detail::Node<Scalar>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) detail::accumulate(A, Mat<Scalar>(self.grad.cwiseProduct(B.value)));
    if (B.requires_grad) detail::accumulate(B, Mat<Scalar>(self.grad.cwiseProduct(A.value)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> mul_scalar(const BasicTensor<Scalar>& x, Scalar s) {
  Mat<Scalar> out = x.value() * s;
  return make_op<Scalar>("mul_scalar", std::move(out), x.shape(), {x}, [s](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], Mat<Scalar>(self.grad * s));
  });
}

/// Adds a length-C row (rank 1, or 1xC) to every row of an RxC tensor.
template <typename Scalar>
BasicTensor<Scalar> add_row(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_string(x.shape()) + " + " + shape_string(row.shape()));
  }
  Mat<Scalar> out = x.value().rowwise() + row.value().row(0);
  return make_op<Scalar>("add_row", std::move(out), x.shape(), {x, row}, [](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], self.grad);
    if (self.inputs[1]->requires_grad) {
      detail::accumulate(*self.inputs[1], Mat<Scalar>(self.grad.colwise().sum()));
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  Mat<Scalar> out = x.value().cwiseMax(Scalar(0));
  return make_op<Scalar>("relu", std::move(out), x.shape(), {x}, [](detail::Node<Scalar>& self) {
    const auto& in = self.inputs[0]->value;
    Mat<Scalar> g = (in.array() > Scalar(0)).select(self.grad.array(), Scalar(0)).matrix();
    detail::accumulate(*self.inputs[0], g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> exp(const BasicTensor<Scalar>& x) {
  Mat<Scalar> out = x.value().array().exp().matrix();
  return make_op<Scalar>("exp", std::move(out), x.shape(), {x}, [](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], Mat<Scalar>(self.grad.cwiseProduct(self.value)));
  });
}

template <typename Scalar>
BasicTensor<Scalar> log(const BasicTensor<Scalar>& x) {
  Mat<Scalar> out = x.value().array().log().matrix();
  return make_op<Scalar>("log", std::move(out), x.shape(), {x}, [](detail::Node<Scalar>& self) {
    detail::accumulate(*self.inputs[0], Mat<Scalar>(self.grad.cwiseQuotient(self.inputs[0]->value)));
  });
}

/// Row-wise softmax over the last dimension. Entries equal to -inf get weight
/// exactly 0; a row that is entirely -inf yields zeros and its index is
/// appended to `empty_rows` when given.
template <typename Scalar>
BasicTensor<Scalar> softmax_rows(const BasicTensor<Scalar>& x, std::vector<Index>* empty_rows = nullptr) {
  const auto& in = x.value();
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  if (in.array().isNaN().any() || (in.array() == -neg_inf).any()) {
    throw NumericError("softmax_rows: input contains NaN or +inf");
  }
  Mat<Scalar> out(in.rows(), in.cols());
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    if (m == neg_inf) {
      out.row(r).setZero();
      if (empty_rows) empty_rows->push_back(r);
      continue;
    }
    // Vectorised exp can return a denormal instead of 0 for -inf.
    out.row(r) = (in.row(r).array() == neg_inf).select(Scalar(0), (in.row(r).array() - m).exp()).matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_op<Scalar>("softmax_rows", std::move(out), x.shape(), {x}, [](detail::Node<Scalar>& self) {
    const auto& y = self.value;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = self.grad.cwiseProduct(y).rowwise().sum();
    Mat<Scalar> g = y.cwiseProduct((self.grad.colwise() - dots));
    detail::accumulate(*self.inputs[0], g);
  });
}

/// Mean over rows: RxC -> rank-1 tensor of length C.
template <typename Scalar>
BasicTensor<Scalar> mean_rows(const BasicTensor<Scalar>& x) {
  if (x.rows() == 0) throw DimensionError("mean_rows of an empty tensor");
  Mat<Scalar> out = x.value().colwise().mean();
  return make_op<Scalar>("mean_rows", std::move(out), {x.cols()}, {x}, [](detail::Node<Scalar>& self) {
    const Index rows = self.inputs[0]->value.rows();
    Mat<Scalar> g = self.grad.replicate(rows, 1) / static_cast<Scalar>(rows);
    detail::accumulate(*self.inputs[0], g);
  });
}

/// Sum of all entries, as a rank-0 tensor.
template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& x) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op<Scalar>("sum", std::move(out), {}, {x}, [](detail::Node<Scalar>& self) {
    const auto& in = self.inputs[0]->value;
    detail::accumulate(*self.inputs[0], Mat<Scalar>(Mat<Scalar>::Constant(in.rows(), in.cols(), self.grad(0, 0))));
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat_cols(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Mat<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op<Scalar>("concat_cols", std::move(out), {rows, cols}, parts, [](detail::Node<Scalar>& self) {
    Index offset = 0;
    for (auto& in : self.inputs) {
      const Index c = in->value.cols();
      if (in->requires_grad) detail::accumulate(*in, Mat<Scalar>(self.grad.middleCols(offset, c)));
      offset += c;
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> concat_rows(const std::vector<BasicTensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op<Scalar>("concat_rows", std::move(out), {rows, cols}, parts, [](detail::Node<Scalar>& self) {
    Index offset = 0;
    for (auto& in : self.inputs) {
      const Index r = in->value.rows();
      if (in->requires_grad) detail::accumulate(*in, Mat<Scalar>(self.grad.middleRows(offset, r)));
      offset += r;
    }
  });
}

template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw BoundsError("slice_rows [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                      shape_string(x.shape()));
  }
  Mat<Scalar> out = x.value().middleRows(begin, count);
  return make_op<Scalar>("slice_rows", std::move(out), {count, x.cols()}, {x},
                         [begin, count](detail::Node<Scalar>& self) {
                           const auto& in = self.inputs[0]->value;
                           Mat<Scalar> g = Mat<Scalar>::Zero(in.rows(), in.cols());
                           g.middleRows(begin, count) = self.grad;
                           detail::accumulate(*self.inputs[0], g);
                         });
}

template <typename Scalar>
BasicTensor<Scalar> slice_cols(const BasicTensor<Scalar>& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw BoundsError("slice_cols [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " +
                      shape_string(x.shape()));
  }
  Mat<Scalar> out = x.value().middleCols(begin, count);
  return make_op<Scalar>("slice_cols", std::move(out), {x.rows(), count}, {x},
                         [begin, count](detail::Node<Scalar>& self) {
                           const auto& in = self.inputs[0]->value;
                           Mat<Scalar> g = Mat<Scalar>::Zero(in.rows(), in.cols());
                           g.middleCols(begin, count) = self.grad;
                           detail::accumulate(*self.inputs[0], g);
                         });
}

/// y[t] = x[t + offset], zero where t + offset falls outside [0, rows).
template <typename Scalar>
BasicTensor<Scalar> shift_rows(const BasicTensor<Scalar>& x, Index offset) {
  const Index rows = x.rows();
  Mat<Scalar> out = Mat<Scalar>::Zero(rows, x.cols());
  const Index lo = std::max<Index>(0, -offset);
  const Index hi = std::min<Index>(rows, rows - offset);
  if (hi > lo) out.middleRows(lo, hi - lo) = x.value().middleRows(lo + offset, hi - lo);
  return make_op<Scalar>("shift_rows", std::move(out), x.shape(), {x}, [lo, hi, offset](detail::Node<Scalar>& self) {
    const auto& in = self.inputs[0]->value;
    Mat<Scalar> g = Mat<Scalar>::Zero(in.rows(), in.cols());
    if (hi > lo) g.middleRows(lo + offset, hi - lo) = self.grad.middleRows(lo, hi - lo);
    detail::accumulate(*self.inputs[0], g);
  });
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& x, Scalar s) {
  return mul_scalar(x, s);
}

}  // namespace stsx
