#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ctg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename Scalar>
class BasicTensor;

namespace detail {

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array values;
  Array grad;  // empty until the first adjoint reaches this node
  bool requires_grad = false;
  bool stochastic = false;  // depends on a training-mode dropout draw
  bool consumed = false;    // backward already ran through this node
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into its parents' grads.
  std::function<void(Node&)> adjoint;

  bool is_leaf() const { return parents.empty(); }

  Array& ensure_grad() {
    if (grad.size() == 0) grad = Array::Zero(values.size());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-d array taking part in a reverse-mode differentiation
/// graph. Handles share their node; values are immutable once an op has
/// produced them (leaves may be edited through `mutable_values`).
template <typename Scalar>
class BasicTensor {
 public:
  using Node = detail::Node<Scalar>;
  using Array = typename Node::Array;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;

  BasicTensor(Shape shape, Array values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape.empty()) throw TensorError("tensor shape must be non-empty");
    for (Index e : shape)
      if (e <= 0) throw TensorError("tensor extents must be positive: " + shape_string(shape));
    if (shape_size(shape) != values.size())
      throw TensorError("value count " + std::to_string(values.size()) +
                        " does not match shape " + shape_string(shape));
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return BasicTensor(std::move(shape), Array::Zero(n), requires_grad);
  }

  static BasicTensor full(Shape shape, Scalar value) {
    const Index n = shape_size(shape);
    return BasicTensor(std::move(shape), Array::Constant(n, value));
  }

  static BasicTensor scalar(Scalar value, bool requires_grad = false) {
    return BasicTensor({1}, Array::Constant(1, value), requires_grad);
  }

  /// Copies a matrix into a rank-2 tensor.
  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
    RowMatrix<Scalar> rm = m;
    Array values = Eigen::Map<const Array>(rm.data(), rm.size());
    return BasicTensor({rm.rows(), rm.cols()}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw TensorError("axis out of range");
    return node().shape[static_cast<std::size_t>(axis)];
  }
  Index size() const { return node().values.size(); }

  const Array& values() const { return node().values; }
  Scalar item() const {
    if (size() != 1) throw TensorError("item() requires a single-element tensor");
    return node().values[0];
  }

  /// Leaf-only write access, for optimizers and finite-difference probes.
  Array& mutable_values() {
    if (!node().is_leaf() || node().consumed) throw TensorError("only leaf tensors may be mutated");
    return node_->values;
  }

  bool requires_grad() const { return node().requires_grad; }
  bool stochastic() const { return node().stochastic; }
  bool has_grad() const { return node().grad.size() != 0; }
  const Array& grad() const {
    if (!has_grad()) throw TensorError("tensor holds no gradient");
    return node().grad;
  }
  void zero_grad() { node_->grad.resize(0); }

  /// Views the last two axes as a matrix; leading axes are folded into rows.
  ConstMatrixMap matrix() const {
    const Index cols = shape().back();
    return ConstMatrixMap(node().values.data(), size() / cols, cols);
  }
  RowMatrix<Scalar> grad_matrix() const {
    const Index cols = shape().back();
    return Eigen::Map<const RowMatrix<Scalar>>(grad().data(), size() / cols, cols);
  }

  // Internal wiring used by ops.
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  const Node& node() const {
    if (!node_) throw TensorError("use of an undefined tensor");
    return *node_;
  }
  Node& node() {
    if (!node_) throw TensorError("use of an undefined tensor");
    return *node_;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

/// Creates an op output. The adjoint closure is only retained when some
/// input needs a gradient, so inference graphs carry no backward state.
template <typename Scalar>
BasicTensor<Scalar> make_result(Shape shape, typename Node<Scalar>::Array values,
                                std::vector<BasicTensor<Scalar>> inputs,
                                std::function<void(Node<Scalar>&)> adjoint) {
  BasicTensor<Scalar> out(std::move(shape), std::move(values));
  auto& node = *out.node_ptr();
  for (const auto& in : inputs) {
    const auto& p = in.node_ptr();
    if (p->consumed)
      throw TensorError("tensor belongs to a graph whose backward pass already ran");
    node.requires_grad = node.requires_grad || p->requires_grad;
    node.stochastic = node.stochastic || p->stochastic;
  }
  if (node.requires_grad) {
    for (auto& in : inputs) node.parents.push_back(in.node_ptr());
    node.adjoint = std::move(adjoint);
  }
  return out;
}

}  // namespace detail

/// Ordered record of the operations that produced a tensor, in topological
/// order (every node after all of its inputs).
template <typename Scalar>
class Graph {
 public:
  using Node = detail::Node<Scalar>;

  static Graph record(const BasicTensor<Scalar>& root) {
    Graph g;
    std::unordered_set<const Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack;
    Node* start = root.node_ptr().get();
    stack.emplace_back(start, 0);
    seen.insert(start);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<Node*>& nodes() const { return order_; }

  /// True when every node appears after all of its recorded parents.
  bool is_topological() const {
    std::unordered_set<const Node*> placed;
    for (const Node* n : order_) {
      for (const auto& p : n->parents)
        if (p->requires_grad && !placed.count(p.get())) return false;
      placed.insert(n);
    }
    return true;
  }

 private:
  std::vector<Node*> order_;
};

/// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from
/// `loss`. Interior nodes release their adjoint state afterwards; a second
/// call on the same graph throws.
template <typename Scalar>
void backward(const BasicTensor<Scalar>& loss) {
  if (loss.size() != 1) throw TensorError("backward requires a scalar loss, got shape " +
                                          shape_string(loss.shape()));
  auto& root = *loss.node_ptr();
  if (root.consumed) throw TensorError("backward already ran for this graph; run a new forward");
  if (!root.requires_grad) {
    root.consumed = true;
    return;
  }
  auto graph = Graph<Scalar>::record(loss);
  root.ensure_grad()[0] += Scalar(1);
  const auto& order = graph.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->is_leaf()) continue;
    if (node->grad.size() != 0 && node->adjoint) node->adjoint(*node);
  }
  for (auto* node : order) {
    if (node->is_leaf()) continue;
    node->consumed = true;
    node->adjoint = nullptr;
    node->parents.clear();
    node->grad.resize(0);
  }
}

using Tensor = BasicTensor<double>;

}  // namespace ctg
