#include "spg/autodiff.hpp"

#include <cmath>
#include <string>

#if defined(__AVX__)
#include <immintrin.h>
#endif

#include "spg/error.hpp"

namespace spg::ad {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ValidationError(std::string(op) + ": " + detail);
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
}

void require_same_tape(const char* op, Var a, Var b) {
  require(a.tape == b.tape && a.tape != nullptr, op, "operands live on different tapes");
}

// Scalar libm calls slow down by an order of magnitude when they run with
// dirty upper vector state, so every node starts from a clean state.
inline void clear_upper_state() {
#if defined(__AVX__)
  _mm256_zeroupper();
#endif
}

}  // namespace

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  clear_upper_state();
  Node node{std::move(value), Matrix(), nullptr, requires_grad, false};
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

Matrix& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward", "root belongs to another tape");
  require(value(root).size() == 1, "backward", "root must be 1x1, got " + shape_str(value(root)));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  nodes_[root.id].has_grad = true;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // Closures only touch grad buffers of earlier nodes, so `n.grad` stays put.
    clear_upper_state();
    n.backward(*this, n.grad);
  }
}

Var add(Var a, Var b) {
  require_same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, g);
                  });
}

Var sub(Var a, Var b) {
  require_same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, -g);
                  });
}

Var mul(Var a, Var b) {
  require_same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tape& t = *a.tape;
  return t.record(a.value().cwiseProduct(b.value()), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
                    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
                  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, t.requires_grad(a),
                  [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  require(a.cols() == b.rows(), "matmul",
          "inner dimension mismatch " + shape_str(a.value()) + " * " + shape_str(b.value()));
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value().transpose());
                    if (tp.requires_grad(b)) tp.accumulate(b, a.value().transpose() * g);
                  });
}

Var linear(Var x, Var weight, Var bias) {
  require_same_tape("linear", x, weight);
  require_same_tape("linear", x, bias);
  require(x.cols() == weight.rows(), "linear",
          "input width " + std::to_string(x.cols()) + " does not match weight " +
              shape_str(weight.value()));
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear",
          "bias must be 1x" + std::to_string(weight.cols()) + ", got " + shape_str(bias.value()));
  Tape& t = *x.tape;
  Matrix out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(weight) || t.requires_grad(bias);
  return t.record(std::move(out), rg, [x, weight, bias](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * weight.value().transpose());
    if (tp.requires_grad(weight)) tp.accumulate(weight, x.value().transpose() * g);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

Var elu(Var x) {
  Tape& t = *x.tape;
  clear_upper_state();
  const auto xa = x.value().array();
  Matrix out = (xa > 0.0).select(xa, xa.min(0.0).exp() - 1.0).matrix();
  Matrix d = (xa > 0.0).select(Eigen::ArrayXXd::Ones(xa.rows(), xa.cols()), out.array() + 1.0).matrix();
  return t.record(std::move(out), t.requires_grad(x), [x, d = std::move(d)](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.cwiseProduct(d));
  });
}

Var exp(Var x) {
  Tape& t = *x.tape;
  Matrix out = x.value().array().exp().matrix();
  Matrix y = out;
  return t.record(std::move(out), t.requires_grad(x),
                  [x, y = std::move(y)](Tape& tp, const Matrix& g) {
                    tp.accumulate(x, g.cwiseProduct(y));
                  });
}

Var sigmoid(Var x) {
  Tape& t = *x.tape;
  Matrix out = x.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Matrix deriv = out.cwiseProduct((1.0 - out.array()).matrix());
  return t.record(std::move(out), t.requires_grad(x),
                  [x, deriv = std::move(deriv)](Tape& tp, const Matrix& g) {
                    tp.accumulate(x, g.cwiseProduct(deriv));
                  });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
  require_same_tape("layer_norm", x, gain);
  require_same_tape("layer_norm", x, shift);
  const Index rows = x.rows();
  const Index cols = x.cols();
  require(cols >= 1, "layer_norm", "need at least one column");
  require(gain.rows() == 1 && gain.cols() == cols, "layer_norm",
          "gain must be 1x" + std::to_string(cols));
  require(shift.rows() == 1 && shift.cols() == cols, "layer_norm",
          "shift must be 1x" + std::to_string(cols));
  const Matrix& xv = x.value();
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += shift.value().row(0);
  Tape& t = *x.tape;
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(shift);
  return t.record(
      std::move(out), rg,
      [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                             const Matrix& g) {
        if (tp.requires_grad(gain)) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (tp.requires_grad(shift)) tp.accumulate(shift, g.colwise().sum());
        if (tp.requires_grad(x)) {
          Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
          Matrix dx(dxhat.rows(), dxhat.cols());
          for (Index r = 0; r < dxhat.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dxhat.cols());
            dx.row(r) = inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          tp.accumulate(x, dx);
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require_same_tape("concat_cols", parts[0], p);
    require(p.rows() == rows, "concat_cols", "row count mismatch");
    cols += p.cols();
    rg = rg || p.tape->requires_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), rg,
                               [saved = std::move(saved)](Tape& tp, const Matrix& g) {
                                 Index c0 = 0;
                                 for (const Var& p : saved) {
                                   if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(c0, p.cols()));
                                   c0 += p.cols();
                                 }
                               });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require_same_tape("concat_rows", parts[0], p);
    require(p.cols() == cols, "concat_rows", "column count mismatch");
    rows += p.rows();
    rg = rg || p.tape->requires_grad(p);
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), rg,
                               [saved = std::move(saved)](Tape& tp, const Matrix& g) {
                                 Index r0 = 0;
                                 for (const Var& p : saved) {
                                   if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(r0, p.rows()));
                                   r0 += p.rows();
                                 }
                               });
}

Var slice_cols(Var x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols", "range out of bounds");
  Tape& t = *x.tape;
  return t.record(x.value().middleCols(start, count), t.requires_grad(x),
                  [x, start, count](Tape& tp, const Matrix& g) {
                    tp.grad_buffer(x).middleCols(start, count) += g;
                  });
}

Var slice_rows(Var x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows", "range out of bounds");
  Tape& t = *x.tape;
  return t.record(x.value().middleRows(start, count), t.requires_grad(x),
                  [x, start, count](Tape& tp, const Matrix& g) {
                    tp.grad_buffer(x).middleRows(start, count) += g;
                  });
}

Var reshape(Var x, Index rows, Index cols) {
  require(rows * cols == x.value().size(), "reshape", "element count mismatch");
  Tape& t = *x.tape;
  // Row-major storage makes reshape a reinterpretation of the same buffer.
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  const Index r0 = x.rows();
  const Index c0 = x.cols();
  return t.record(std::move(out), t.requires_grad(x), [x, r0, c0](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Eigen::Map<const Matrix>(g.data(), r0, c0));
  });
}

Var sum(Var x) {
  Tape& t = *x.tape;
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var x) {
  require(x.value().size() > 0, "mean", "empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var row_sum(Var x) {
  Tape& t = *x.tape;
  Matrix out = x.value().rowwise().sum();
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Matrix& g) {
    tp.accumulate(x, g.col(0).replicate(1, x.cols()));
  });
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double m = xv.row(r).maxCoeff();
    out.row(r) = (xv.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  Matrix y = out;
  return t.record(std::move(out), t.requires_grad(x),
                  [x, y = std::move(y)](Tape& tp, const Matrix& g) {
                    Matrix dx(y.rows(), y.cols());
                    for (Index r = 0; r < y.rows(); ++r) {
                      const double dot = g.row(r).dot(y.row(r));
                      dx.row(r) = y.row(r).array() * (g.row(r).array() - dot);
                    }
                    tp.accumulate(x, dx);
                  });
}

Var softmax_groups(Var x, Index group) {
  require(group >= 1 && x.rows() % group == 0, "softmax_groups", "rows must be a multiple of the group size");
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix out(xv.rows(), xv.cols());
  for (Index b = 0; b < xv.rows(); b += group) {
    const auto block = xv.middleRows(b, group);
    const Eigen::RowVectorXd m = block.colwise().maxCoeff();
    Matrix e = (block.rowwise() - m).array().exp();
    const Eigen::RowVectorXd denom = e.colwise().sum();
    out.middleRows(b, group) = e.array().rowwise() / denom.array();
  }
  Matrix y = out;
  return t.record(std::move(out), t.requires_grad(x),
                  [x, y = std::move(y), group](Tape& tp, const Matrix& g) {
                    Matrix dx(y.rows(), y.cols());
                    for (Index b = 0; b < y.rows(); b += group) {
                      const auto yb = y.middleRows(b, group);
                      const auto gb = g.middleRows(b, group);
                      const Eigen::RowVectorXd dot = yb.cwiseProduct(gb).colwise().sum();
                      dx.middleRows(b, group) = yb.array() * (gb.rowwise() - dot).array();
                    }
                    tp.accumulate(x, dx);
                  });
}

Var mul_col(Var x, Var col) {
  require_same_tape("mul_col", x, col);
  require(col.cols() == 1 && col.rows() == x.rows(), "mul_col", "column must be Rx1");
  Tape& t = *x.tape;
  Matrix out = x.value().array().colwise() * col.value().col(0).array();
  return t.record(std::move(out), t.requires_grad(x) || t.requires_grad(col),
                  [x, col](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(x))
                      tp.accumulate(x, g.array().colwise() * col.value().col(0).array());
                    if (tp.requires_grad(col))
                      tp.accumulate(col, g.cwiseProduct(x.value()).rowwise().sum());
                  });
}

Var gather_rows(Var x, std::span<const std::int64_t> index) {
  const Index n = x.rows();
  Matrix out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t e = 0; e < index.size(); ++e) {
    require(index[e] >= 0 && index[e] < n, "gather_rows",
            "index " + std::to_string(index[e]) + " out of range [0," + std::to_string(n) + ")");
    out.row(static_cast<Index>(e)) = x.value().row(index[e]);
  }
  Tape& t = *x.tape;
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return t.record(std::move(out), t.requires_grad(x),
                  [x, idx = std::move(idx)](Tape& tp, const Matrix& g) {
                    Matrix& gx = tp.grad_buffer(x);
                    for (std::size_t e = 0; e < idx.size(); ++e)
                      gx.row(idx[e]) += g.row(static_cast<Index>(e));
                  });
}

Var scatter_sum(Var x, std::span<const std::int64_t> labels, Index groups) {
  require(static_cast<Index>(labels.size()) == x.rows(), "scatter_sum",
          "label count " + std::to_string(labels.size()) + " != rows " + std::to_string(x.rows()));
  Matrix out = Matrix::Zero(groups, x.cols());
  for (std::size_t e = 0; e < labels.size(); ++e) {
    require(labels[e] >= 0 && labels[e] < groups, "scatter_sum",
            "label " + std::to_string(labels[e]) + " out of range [0," + std::to_string(groups) + ")");
    out.row(labels[e]) += x.value().row(static_cast<Index>(e));
  }
  Tape& t = *x.tape;
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return t.record(std::move(out), t.requires_grad(x),
                  [x, lab = std::move(lab)](Tape& tp, const Matrix& g) {
                    Matrix gx(static_cast<Index>(lab.size()), g.cols());
                    for (std::size_t e = 0; e < lab.size(); ++e) gx.row(static_cast<Index>(e)) = g.row(lab[e]);
                    tp.accumulate(x, gx);
                  });
}

}  // namespace spg::ad
