#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "retain/tensor.hpp"

namespace retain {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Define-by-run record of primitive operations for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so creation order is a topological
/// order and backward() simply walks the node list in reverse. Every op checks
/// its result for NaN/Inf and throws NumericError. A tape constructed with
/// `record = false` keeps values but drops backward closures, which is what
/// inference uses.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (a parameter).
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  /// Appends the result of an op. `inputs` decide whether the node needs a
  /// gradient; `backward` receives the node's accumulated output gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  /// Accumulated gradient of the last backward() call; zeros when the node
  /// was unreachable.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Tensor& g);
  /// Gradient buffer of `v`, allocated as zeros on first use. Only valid for
  /// nodes that require a gradient.
  Tensor& grad_buffer(Var v);

  /// Reverse sweep from a scalar output. Each recorded op is visited once.
  void backward(Var output);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check_owner(Var v) const;

  bool record_;
  std::vector<Node> nodes_;
};

// Differentiable ops. Binary ops require both operands on the same tape.

/// a (m x k) * b (k x n)
Var matmul(Var a, Var b);
/// a (m x k) * b^T for b (n x k); the shape of a linear layer x W^T.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x (B x n) + bias broadcast over rows; bias has n elements.
Var add_row(Var x, Var bias);
/// Each row r of x (B x n) multiplied by s[r]; s has B elements.
Var mul_col(Var x, Var s);
Var tanh(Var a);
Var sigmoid(Var a);
/// Softmax over the last axis (each row of a matrix, or the whole vector).
Var softmax(Var a);
/// Columns [begin, end) of a matrix.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Rows [begin, end) of a matrix.
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// (T*B) x 1 column in time-major order to a B x T matrix:
/// out[b][t] = a[t*B + b].
Var unstack_column(Var a, std::size_t batch);
/// For weights (B x T) and time-major x ((T*B) x n), the B x n matrix with
/// row b = sum over t of weights[b][t] * x[t*B + b], summed in time order.
Var weighted_step_sum(Var weights, Var x);
/// Horizontal concatenation of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);
/// Sum of all elements, as a scalar.
Var sum(Var a);
/// Mean of squared differences, as a scalar.
Var mse(Var prediction, Var target);

}  // namespace retain
