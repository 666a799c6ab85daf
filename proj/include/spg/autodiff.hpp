#pragma once

// Reverse-mode differentiation over dense row-major f64 matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() just walks the node list in reverse.
// Each node owns its value and (lazily) its gradient. Ops are free functions
// taking and returning Var handles; backward closures capture parent ids.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace spg {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf without gradient.
  Var constant(Matrix value);
  // Leaf whose gradient is tracked.
  Var variable(Matrix value);
  // Interior node. `backward` is dropped if no parent requires a gradient.
  Var record(Matrix value, bool requires_grad, Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }

  // Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
  Matrix grad(Var v) const;

  // Mutable gradient buffer, zero-initialized on first access. Backward
  // closures use this for scatter-style accumulation.
  Matrix& grad_buffer(Var v);
  void accumulate(Var v, const Matrix& g);

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to all ancestors.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

// ---- elementwise and linear algebra ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, double s);
Var matmul(Var a, Var b);
// x (B x Cin) * W (Cin x Cout) + b (1 x Cout)
Var linear(Var x, Var weight, Var bias);
Var elu(Var x);
Var exp(Var x);
Var sigmoid(Var x);
// Per-row standardization followed by gain (1 x C) and shift (1 x C).
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);

// ---- shape ----
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, Index start, Index count);
Var slice_rows(Var x, Index start, Index count);
Var reshape(Var x, Index rows, Index cols);

// ---- reductions ----
Var sum(Var x);   // 1 x 1
Var mean(Var x);  // 1 x 1
Var row_sum(Var x);  // R x 1
Var softmax_rows(Var x);
// Softmax down each column within consecutive blocks of `group` rows.
Var softmax_groups(Var x, Index group);
// x (R x C) scaled row-wise by col (R x 1).
Var mul_col(Var x, Var col);

// ---- indexed ----
// out[e] = x[index[e]]; backward scatter-adds.
Var gather_rows(Var x, std::span<const std::int64_t> index);
// out[g] = sum of x[e] with label[e] == g.
Var scatter_sum(Var x, std::span<const std::int64_t> labels, Index groups);

}  // namespace ad
}  // namespace spg
