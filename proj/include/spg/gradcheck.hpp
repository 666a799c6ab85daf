#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spg/autodiff.hpp"

namespace spg {

// A differentiable function of several matrix inputs. The output may have any
// shape; the checker contracts it with a fixed random projection.
using DiffFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Location of the worst coordinate.
  std::size_t input = 0;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
  std::string describe() const;
};

// Central differences on every input coordinate against the tape gradient.
// Per-coordinate error is |analytic - numeric| / max(|numeric|, floor) with
// floor = 1e-3 * max|numeric| (and at least 1e-8), so a gradient that is off
// by a constant factor k reports |k - 1|.
GradCheckReport finite_diff_check(const DiffFn& fn, const std::vector<Matrix>& inputs,
                                  double step = 1e-5, std::uint64_t projection_seed = 7);

}  // namespace spg
