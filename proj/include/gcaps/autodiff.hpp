#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Graph is a tape: every op appends one node holding its output value and,
// when any input is gradient-tracked, a closure that pushes the node's
// gradient to its inputs. Nodes are appended in creation order, so reverse
// creation order is a valid reverse topological order for the backward sweep.

#include <cstddef>
#include <functional>
#include <vector>

#include "gcaps/tensor.hpp"

namespace gcaps {

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while its graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Index size() const { return value().size(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Untracked leaf; receives no gradient.
  Var constant(Tensor value);
  /// Gradient-tracked leaf.
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient accumulated by the last backward pass. Returns zeros for nodes
  /// the loss does not depend on.
  Tensor grad(Var v) const;

  /// Sweeps the tape in reverse from a scalar loss. A second call on the same
  /// graph throws GraphError unless reset_gradients() intervenes.
  void backward(Var loss);

  void reset_gradients();

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementer interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  /// Gradient buffer of node `id`, zero-allocated on first access.
  Tensor& grad_buffer(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() > 0; }
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  bool tracked(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  void check_owner(Var v, const char* op) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Binary elementwise ops broadcast operands of equal rank
// whose extents match or are 1. Axis reductions keep the reduced axis with
// extent 1.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
/// Elementwise minimum of two broadcastable tensors.
Var minimum(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

/// Batched matrix product [..., m, k] x [..., k, n] -> [..., m, n]; leading
/// batch extents broadcast.
Var matmul(Var a, Var b);
/// Cross-correlation of [B,C,H,W] input with [O,C,KH,KW] kernel.
Var conv2d(Var input, Var kernel, Index stride = 1, Index pad = 0);

Var relu(Var x);
Var square(Var x);
Var log(Var x);
Var exp(Var x);
/// Elementwise sign. Not differentiable; the result is an untracked node.
Var sign(Var x);
Var clip(Var x, double lo, double hi);

Var softmax(Var x, Index axis);
/// Euclidean norm along `axis`: sqrt(sum x^2 + guard). With guard 0 the
/// value is exact; the backward pass always divides by at least
/// sqrt(sum x^2 + kNormGuard).
Var l2_norm(Var x, Index axis, double guard = 0.0);
/// v = |s|^2 / (1 + |s|^2) * s / sqrt(|s|^2 + kNormGuard) along `axis`.
Var squash(Var x, Index axis);
Var sum(Var x, Index axis);
Var sum(Var x);
Var mean(Var x, Index axis);
Var max(Var x, Index axis);

Var reshape(Var x, Shape shape);
Var permute(Var x, const std::vector<Index>& order);
Var concat(const std::vector<Var>& parts, Index axis);

inline constexpr double kNormGuard = 1e-12;

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }

}  // namespace gcaps
