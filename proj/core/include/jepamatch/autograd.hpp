#pragma once

// Define-by-run reverse-mode differentiation over dense Tensors.
//
// A Tape records every operation in execution order. Because an operation can
// only consume nodes that already exist, recording order is a topological
// order, and backward() simply walks the nodes from the loss back to index 0.
// Each node's gradient is therefore complete before its own backward function
// runs.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "jepamatch/tensor.hpp"

namespace jepamatch {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape *tape = nullptr;
  std::size_t id = 0;

  const Tensor &value() const;
  const Shape &shape() const { return value().shape(); }
};

class Tape {
public:
  // Receives the gradient of the loss w.r.t. this node's output.
  using BackwardFn = std::function<void(Tape &, const Tensor &grad_out)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var param(Tensor value) { return leaf(std::move(value), true); }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var leaf(Tensor value, bool requires_grad);

  // Records an operation. The node requires grad iff any input does; when
  // none does the backward function is dropped.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor &value(std::size_t id) const { return nodes_[id].value; }
  const Tensor &value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  // Gradient of the last backward() loss w.r.t. `v`. Zeros when `v` did not
  // influence the loss.
  Tensor grad(Var v) const;

  // Adds `g` into the accumulator of node `id` (no-op if it needs no grad).
  void accumulate(std::size_t id, const Tensor &g);
  // Mutable accumulator, zero-initialised on first access.
  Tensor &grad_buffer(std::size_t id);

  // Reverse-mode sweep. `loss` must be a single-element tensor. Previous
  // gradients are discarded, so repeated calls give identical results.
  void backward(Var loss);

  // True when `ancestor` lies on some input path of `node`.
  bool depends_on(Var node, Var ancestor) const;

  std::size_t size() const noexcept { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };
  std::vector<Node> nodes_;
};

namespace ag {

enum class Unary { gelu, relu, exp, cos, sin, log, sqrt };

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
// a[B×n] + bias[n] broadcast over rows.
Var add_row(Var a, Var bias);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
Var elementwise(Unary op, Var x);
inline Var gelu(Var x) { return elementwise(Unary::gelu, x); }
inline Var relu(Var x) { return elementwise(Unary::relu, x); }
Var detach(Var x);

// Mean over rows of H(target_row, softmax(logits_row)). `targets` rows must
// be one-hot.
Var softmax_cross_entropy(Var logits, const Tensor &targets);
// (1/denominator) * sum_i weight_i * H(target_i, softmax(logits_i)).
Var weighted_softmax_cross_entropy(Var logits, const Tensor &targets,
                                   std::span<const double> weights,
                                   double denominator);

Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
// Row i of the result is x[index[i]], or zeros when index[i] < 0.
Var gather_rows(Var x, std::span<const int> index);
// Row g of the result is the mean of x rows with group[i] == g, for each g
// in `groups` (groups with no member are a contract error).
Var group_mean(Var x, std::span<const int> group,
               std::span<const int> groups);
// Each row scaled to unit L2 norm; norms clamped below by eps.
Var row_normalize(Var x, double eps);

enum class Distance { squared_euclidean, cosine };
// Per-row distance between a and b, shape [B].
Var row_distance(Var a, Var b, Distance metric);

// Training-mode batch normalisation over rows with learned per-column
// gamma/beta. Writes the (biased) batch mean/variance to the out params.
Var batch_norm(Var x, Var gamma, Var beta, double eps, Tensor *batch_mean,
               Tensor *batch_var);
// Column-wise affine map x * s + t (s, t constant or learned, shape [n]).
Var column_affine(Var x, Var s, Var t);

} // namespace ag

// Plain numeric helpers shared by forward passes and oracles.
Tensor softmax_rows(const Tensor &logits);
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);
double gelu_value(double x);
double gelu_derivative(double x);

} // namespace jepamatch
