#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/config.hpp"
#include "spg/scene.hpp"

namespace spg {

// IoU minus squared center distance over the squared diagonal of the
// smallest box enclosing both. Range (-1, 1].
double diou(const Box3& a, const Box3& b);

// Value and gradient w.r.t. the first box's (center, size).
double diou_with_grad(const Box3& pred, const Box3& target, std::array<double, 6>* grad);

// Two-term focal matching cost for the target-class probability p:
// alpha (1-p)^gamma (-log p) - (1-alpha) p^gamma (-log(1-p)), p clamped to
// [1e-7, 1 - 1e-7]. Decreases as p grows.
double focal_cost(double p, double alpha = 0.25, double gamma = 2.0);

// P x G matching cost. Entries whose proposal centroid lies outside the
// ground-truth box are +inf and never selectable.
struct CostMatrix {
  Matrix values;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> inside;

  Index proposals() const { return values.rows(); }
  Index truths() const { return values.cols(); }
};

// Cost = lambda_cls * focal_cost(p_gt_class) - lambda_reg * diou(pred, gt).
CostMatrix build_cost_matrix(const std::vector<Box3>& boxes, const Matrix& class_probs, const Matrix& centroids,
                             const std::vector<LabeledBox>& gts, double lambda_cls = 1.0, double lambda_reg = 1.0,
                             double alpha = 0.25, double gamma = 2.0);

struct Assignment {
  static constexpr std::int64_t kNegative = -1;
  // Per proposal: matched ground truth or kNegative.
  std::vector<std::int64_t> matched;
  std::vector<double> matched_cost;
  // Per ground truth: its positive proposals in ascending cost.
  std::vector<std::vector<std::int64_t>> positives;

  Index positive_count() const;
  // {"positives": [[gt, proposal, cost], ...]} ordered by gt then cost.
  std::string to_json() const;
};

// Each ground truth takes its r cheapest finite-cost proposals (ties to the
// smaller proposal index). A proposal picked by several ground truths stays
// with the cheapest (ties to the smaller gt index); the others do not backfill.
Assignment multiple_match(const CostMatrix& costs, int r = 18);

// Cube root of the product over axes of min(d-, d+) / max(d-, d+), where d-
// and d+ are the distances to the two faces. Throws if p is outside the box.
double centerness_target(const Vec3& p, const Box3& box);

// ---- differentiable loss terms ----

// Mean over `rows` of 1 - diou(boxes[row], targets[i]); boxes is P x 6 (center, size).
ad::Var diou_loss(ad::Var boxes, const std::vector<std::int64_t>& rows, const std::vector<Box3>& targets);

// Sigmoid focal loss summed over all P x K entries, divided by `normalizer`.
ad::Var sigmoid_focal_loss(ad::Var logits, const Matrix& targets, double alpha, double gamma, double normalizer);

// Mean over `rows` of BCE(sigmoid(logit), t) - H(t): zero at the optimum
// even for soft targets, same gradient as plain BCE.
ad::Var centerness_loss(ad::Var logits, const std::vector<std::int64_t>& rows, const std::vector<double>& targets);

struct LossBreakdown {
  ad::Var total;
  double total_value = 0.0;
  double vote = 0.0;
  double cntr = 0.0;
  double box = 0.0;
  double cls = 0.0;
  Index positives = 0;
};

struct LossInputs {
  ad::Var class_logits;      // P x K
  ad::Var boxes;             // P x 6
  ad::Var centerness_logit;  // P x 1
  Matrix centroids;          // P x 3
  ad::Var vote_loss;         // 1 x 1
};

LossBreakdown total_loss(const LossInputs& in, const Assignment& assignment, const std::vector<LabeledBox>& gts,
                         const PipelineConfig& config);

}  // namespace spg
