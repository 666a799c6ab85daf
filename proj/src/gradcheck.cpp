#include "spg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spg/params.hpp"

namespace spg {

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  os << "max rel err " << max_rel_error << " at input " << input << " (" << row << "," << col
     << "): analytic " << analytic << " numeric " << numeric << " over " << coordinates << " coords";
  return os.str();
}

namespace {

double evaluate(const DiffFn& fn, const std::vector<Matrix>& inputs, const Matrix& projection) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const Matrix& m : inputs) vars.push_back(tape.constant(m));
  const ad::Var out = fn(tape, vars);
  return out.value().cwiseProduct(projection).sum();
}

}  // namespace

GradCheckReport finite_diff_check(const DiffFn& fn, const std::vector<Matrix>& inputs, double step,
                                  std::uint64_t projection_seed) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
  const ad::Var out = fn(tape, vars);

  Rng rng(projection_seed);
  Matrix projection(out.rows(), out.cols());
  for (Index i = 0; i < projection.size(); ++i) projection.data()[i] = rng.uniform(-1.0, 1.0);
  const ad::Var loss = ad::sum(ad::mul(out, tape.constant(projection)));
  tape.backward(loss);

  std::vector<Matrix> analytic;
  std::vector<Matrix> numeric;
  double max_numeric = 0.0;
  std::vector<Matrix> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    analytic.push_back(tape.grad(vars[k]));
    Matrix num(inputs[k].rows(), inputs[k].cols());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = work[k].data()[i];
      work[k].data()[i] = orig + step;
      const double up = evaluate(fn, work, projection);
      work[k].data()[i] = orig - step;
      const double down = evaluate(fn, work, projection);
      work[k].data()[i] = orig;
      num.data()[i] = (up - down) / (2.0 * step);
      max_numeric = std::max(max_numeric, std::abs(num.data()[i]));
    }
    numeric.push_back(std::move(num));
  }

  GradCheckReport report;
  const double floor = std::max(1e-3 * max_numeric, 1e-8);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double a = analytic[k].data()[i];
      const double n = numeric[k].data()[i];
      const double err = std::abs(a - n) / std::max(std::abs(n), floor);
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.input = k;
        report.row = i / inputs[k].cols();
        report.col = i % inputs[k].cols();
        report.analytic = a;
        report.numeric = n;
      }
    }
  }
  return report;
}

}  // namespace spg
