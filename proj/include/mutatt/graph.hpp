#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mutatt/tensor.hpp"

namespace mutatt {

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while its graph
// is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Selection mask for masked reductions: nonzero keeps the position.
using Mask = std::vector<std::uint8_t>;

// Tape of operations recorded in creation order. A graph is built for one
// forward pass, back-propagated once, then discarded.
class Graph {
 public:
  // Receives the gradient of the node being processed; accumulates into the
  // gradients of its inputs through `Graph::grad_target`.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Value that never receives a gradient.
  Var constant(Tensor value);
  // Differentiable leaf owning its value; read its gradient with grad().
  Var leaf(Tensor value);
  // Differentiable leaf borrowing `value` (which must outlive the graph).
  // After backward, the leaf's gradient is added into `*grad_sink` when
  // non-null.
  Var param(const Tensor& value, Tensor* grad_sink);

  // Reverse sweep from a rank-0 loss. Throws ShapeError for a non-scalar
  // loss and GraphStateError when called a second time.
  void backward(Var loss);

  // Gradient of a node after backward; all-zero for nodes off the loss path.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool backpropagated() const { return backpropagated_; }
  std::size_t size() const { return nodes_.size(); }

  // --- used by operation implementations ---
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const;
  // Gradient buffer of a node during backward, or nullptr when the node does
  // not require a gradient.
  Tensor* grad_target(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool backpropagated_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Shapes are checked eagerly; mismatches throw
// ShapeError naming both operands.

// a: [q] or [p x q], b: [q x r] -> [r] or [p x r]
Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
// m: [n x h], v: [h]; adds v to every row.
Var add_row(Var m, Var v);

Var tanh(Var a);
Var relu(Var a);

// Rank-0 results.
Var sum(Var a);
Var dot(Var a, Var b);

// Numerically stable softmax over a vector. Masked positions are exactly 0.
// Throws InvalidMaskError when the mask selects nothing.
Var softmax(Var x);
Var softmax(Var x, const Mask& mask);

// Norm floor below which cosine similarity is defined as 0.
inline constexpr double kCosineEpsilon = 1e-12;

// a^T b / (|a||b|); 0 with zero gradient if either norm is below epsilon.
Var cosine_similarity(Var a, Var b);
// Row-wise cosine of every row of m [t x d] against v [d] -> [t].
Var cosine_rows(Var m, Var v);

// Rows of table [V x d] selected by ids -> [T x d]. Rows for `padding_id`
// are zero and never receive gradient.
Var gather_rows(Var table, std::span<const std::int64_t> ids,
                std::int64_t padding_id = 0);

// Mean of the rows of m [n x d] selected by mask -> [d].
Var masked_mean_rows(Var m, const Mask& mask);
// sum_n w[n] * m[n, :] for w [n], m [n x d] -> [d].
Var weighted_sum_rows(Var w, Var m);

Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
// [n x a] ++ [n x b] -> [n x (a+b)]
Var concat_cols(Var a, Var b);
// Rows [begin, begin+count) of a matrix, or elements of a vector.
Var slice(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, Shape shape);
// v [d] repeated n times -> [n x d]
Var repeat_rows(Var v, std::size_t n);

}  // namespace mutatt
