#include "spg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "json.hpp"

#include "spg/error.hpp"

namespace spg {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

Box3 box_from_row(const Matrix& m, Index r) {
  Box3 b;
  b.center = m.row(r).head<3>().transpose();
  b.size = m.row(r).tail<3>().transpose();
  return b;
}

ad::Var scalar_constant(ad::Tape& t, double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return t.constant(std::move(m));
}

}  // namespace

double diou_with_grad(const Box3& pred, const Box3& target, std::array<double, 6>* grad) {
  const Vec3 lo_p = pred.min(), hi_p = pred.max();
  const Vec3 lo_t = target.min(), hi_t = target.max();
  Vec3 ov, ext;
  for (int a = 0; a < 3; ++a) {
    ov[a] = std::max(0.0, std::min(hi_p[a], hi_t[a]) - std::max(lo_p[a], lo_t[a]));
    ext[a] = std::max(hi_p[a], hi_t[a]) - std::min(lo_p[a], lo_t[a]);
  }
  const double inter = ov.prod();
  const double vp = pred.volume();
  const double uni = vp + target.volume() - inter;
  const double iou = inter / uni;
  const double c2 = ext.squaredNorm();
  const Vec3 delta = pred.center - target.center;
  const double d2 = delta.squaredNorm();
  const double value = iou - d2 / c2;
  if (!grad) return value;

  const double diou_dinter = 1.0 / uni + inter / (uni * uni);
  const double diou_dvp = -inter / (uni * uni);
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    const double ov_others = ov[b] * ov[c];
    const double size_others = pred.size[b] * pred.size[c];
    const double dinter_dhi = (ov[a] > 0 && hi_p[a] < hi_t[a]) ? ov_others : 0.0;
    const double dinter_dlo = (ov[a] > 0 && lo_p[a] > lo_t[a]) ? -ov_others : 0.0;
    const double dc2_dhi = hi_p[a] > hi_t[a] ? 2.0 * ext[a] : 0.0;
    const double dc2_dlo = lo_p[a] < lo_t[a] ? -2.0 * ext[a] : 0.0;
    const double dhi = diou_dinter * dinter_dhi + diou_dvp * size_others + d2 / (c2 * c2) * dc2_dhi;
    const double dlo = diou_dinter * dinter_dlo - diou_dvp * size_others + d2 / (c2 * c2) * dc2_dlo;
    (*grad)[a] = dhi + dlo - 2.0 * delta[a] / c2;
    (*grad)[3 + a] = 0.5 * (dhi - dlo);
  }
  return value;
}

double diou(const Box3& a, const Box3& b) { return diou_with_grad(a, b, nullptr); }

double focal_cost(double p, double alpha, double gamma) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  const double pos = alpha * std::pow(1.0 - q, gamma) * -std::log(q);
  const double neg = (1.0 - alpha) * std::pow(q, gamma) * -std::log(1.0 - q);
  return pos - neg;
}

CostMatrix build_cost_matrix(const std::vector<Box3>& boxes, const Matrix& class_probs, const Matrix& centroids,
                             const std::vector<LabeledBox>& gts, double lambda_cls, double lambda_reg, double alpha,
                             double gamma) {
  const auto p = static_cast<Index>(boxes.size());
  const auto g = static_cast<Index>(gts.size());
  if (class_probs.rows() != p || centroids.rows() != p)
    throw ValidationError("build_cost_matrix: boxes, probabilities and centroids disagree on proposal count");
  CostMatrix cost;
  cost.values = Matrix::Constant(p, g, std::numeric_limits<double>::infinity());
  cost.inside = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(p, g, false);
  for (Index j = 0; j < g; ++j) {
    const LabeledBox& gt = gts[static_cast<std::size_t>(j)];
    if (gt.class_id < 0 || gt.class_id >= class_probs.cols())
      throw ValidationError("build_cost_matrix: ground-truth class outside probability columns");
    for (Index i = 0; i < p; ++i) {
      if (!gt.box.contains(centroids.row(i).transpose())) continue;
      cost.inside(i, j) = true;
      cost.values(i, j) = lambda_cls * focal_cost(class_probs(i, gt.class_id), alpha, gamma) -
                          lambda_reg * diou(boxes[static_cast<std::size_t>(i)], gt.box);
    }
  }
  return cost;
}

Index Assignment::positive_count() const {
  return std::count_if(matched.begin(), matched.end(), [](std::int64_t m) { return m != kNegative; });
}

std::string Assignment::to_json() const {
  nlohmann::ordered_json j;
  j["positives"] = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < positives.size(); ++g)
    for (std::int64_t pidx : positives[g])
      j["positives"].push_back({static_cast<std::int64_t>(g), pidx, matched_cost[static_cast<std::size_t>(pidx)]});
  return j.dump();
}

Assignment multiple_match(const CostMatrix& costs, int r) {
  if (r < 1) throw ValidationError("multiple_match: r must be >= 1");
  const Index p = costs.proposals();
  const Index g = costs.truths();
  // Candidate lists per ground truth.
  std::vector<std::vector<std::int64_t>> top(static_cast<std::size_t>(g));
  for (Index j = 0; j < g; ++j) {
    std::vector<std::int64_t> cand;
    for (Index i = 0; i < p; ++i)
      if (std::isfinite(costs.values(i, j))) cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](std::int64_t a, std::int64_t b) { return costs.values(a, j) < costs.values(b, j); });
    if (static_cast<int>(cand.size()) > r) cand.resize(static_cast<std::size_t>(r));
    top[static_cast<std::size_t>(j)] = std::move(cand);
  }
  Assignment out;
  out.matched.assign(static_cast<std::size_t>(p), Assignment::kNegative);
  out.matched_cost.assign(static_cast<std::size_t>(p), std::numeric_limits<double>::infinity());
  for (Index j = 0; j < g; ++j) {
    for (std::int64_t i : top[static_cast<std::size_t>(j)]) {
      const double c = costs.values(i, j);
      auto& m = out.matched[static_cast<std::size_t>(i)];
      // Ascending j means an equal cost keeps the earlier ground truth.
      if (m == Assignment::kNegative || c < out.matched_cost[static_cast<std::size_t>(i)]) {
        m = j;
        out.matched_cost[static_cast<std::size_t>(i)] = c;
      }
    }
  }
  out.positives.assign(static_cast<std::size_t>(g), {});
  for (Index j = 0; j < g; ++j)
    for (std::int64_t i : top[static_cast<std::size_t>(j)])
      if (out.matched[static_cast<std::size_t>(i)] == j) out.positives[static_cast<std::size_t>(j)].push_back(i);
  return out;
}

double centerness_target(const Vec3& p, const Box3& box) {
  if (!box.contains(p)) throw ValidationError("centerness_target: position outside the box");
  const Vec3 lo = p - box.min();
  const Vec3 hi = box.max() - p;
  double prod = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double mx = std::max(lo[a], hi[a]);
    prod *= mx > 0.0 ? std::min(lo[a], hi[a]) / mx : 0.0;
  }
  return std::cbrt(prod);
}

ad::Var diou_loss(ad::Var boxes, const std::vector<std::int64_t>& rows, const std::vector<Box3>& targets) {
  if (rows.size() != targets.size()) throw ValidationError("diou_loss: rows and targets differ in length");
  if (boxes.cols() != 6) throw ValidationError("diou_loss: boxes must be P x 6");
  ad::Tape& t = *boxes.tape;
  if (rows.empty()) return scalar_constant(t, 0.0);
  const double n = static_cast<double>(rows.size());
  Matrix grad = Matrix::Zero(boxes.rows(), 6);
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::array<double, 6> g{};
    total += 1.0 - diou_with_grad(box_from_row(boxes.value(), rows[k]), targets[k], &g);
    for (int c = 0; c < 6; ++c) grad(rows[k], c) -= g[static_cast<std::size_t>(c)] / n;
  }
  Matrix value(1, 1);
  value(0, 0) = total / n;
  return t.record(std::move(value), t.requires_grad(boxes),
                  [boxes, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) { tp.accumulate(boxes, grad * g(0, 0)); });
}

ad::Var sigmoid_focal_loss(ad::Var logits, const Matrix& targets, double alpha, double gamma, double normalizer) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw ValidationError("sigmoid_focal_loss: targets must match logits");
  const Matrix& x = logits.value();
  Matrix grad(x.rows(), x.cols());
  double total = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double xi = x.data()[i];
    const double t = targets.data()[i];
    const double p = sigmoid(xi);
    const double log_p = -softplus(-xi);
    const double log_q = -softplus(xi);
    const double pos = -alpha * std::pow(1.0 - p, gamma) * log_p;
    const double neg = -(1.0 - alpha) * std::pow(p, gamma) * log_q;
    total += t * pos + (1.0 - t) * neg;
    const double dpos = alpha * std::pow(1.0 - p, gamma) * (gamma * p * log_p - (1.0 - p));
    const double dneg = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_q);
    grad.data()[i] = (t * dpos + (1.0 - t) * dneg) / normalizer;
  }
  Matrix value(1, 1);
  value(0, 0) = total / normalizer;
  ad::Tape& tp0 = *logits.tape;
  return tp0.record(std::move(value), tp0.requires_grad(logits),
                    [logits, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) {
                      tp.accumulate(logits, grad * g(0, 0));
                    });
}

ad::Var centerness_loss(ad::Var logits, const std::vector<std::int64_t>& rows, const std::vector<double>& targets) {
  if (rows.size() != targets.size()) throw ValidationError("centerness_loss: rows and targets differ in length");
  if (logits.cols() != 1) throw ValidationError("centerness_loss: logits must be P x 1");
  ad::Tape& t = *logits.tape;
  if (rows.empty()) return scalar_constant(t, 0.0);
  const double n = static_cast<double>(rows.size());
  Matrix grad = Matrix::Zero(logits.rows(), 1);
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double x = logits.value()(rows[k], 0);
    const double tv = targets[k];
    const double entropy = -xlogx(tv) - xlogx(1.0 - tv);
    total += softplus(x) - tv * x - entropy;
    grad(rows[k], 0) += (sigmoid(x) - tv) / n;
  }
  Matrix value(1, 1);
  value(0, 0) = total / n;
  return t.record(std::move(value), t.requires_grad(logits),
                  [logits, grad = std::move(grad)](ad::Tape& tp, const Matrix& g) { tp.accumulate(logits, grad * g(0, 0)); });
}

LossBreakdown total_loss(const LossInputs& in, const Assignment& assignment, const std::vector<LabeledBox>& gts,
                         const PipelineConfig& config) {
  const Index p = in.class_logits.rows();
  if (static_cast<Index>(assignment.matched.size()) != p)
    throw ValidationError("total_loss: assignment covers " + std::to_string(assignment.matched.size()) +
                          " proposals, head produced " + std::to_string(p));
  Matrix cls_targets = Matrix::Zero(p, in.class_logits.cols());
  std::vector<std::int64_t> rows;
  std::vector<Box3> box_targets;
  std::vector<double> cntr_targets;
  for (Index i = 0; i < p; ++i) {
    const std::int64_t m = assignment.matched[static_cast<std::size_t>(i)];
    if (m == Assignment::kNegative) continue;
    const LabeledBox& gt = gts.at(static_cast<std::size_t>(m));
    cls_targets(i, gt.class_id) = 1.0;
    rows.push_back(i);
    box_targets.push_back(gt.box);
    cntr_targets.push_back(centerness_target(in.centroids.row(i).transpose(), gt.box));
  }
  LossBreakdown out;
  out.positives = static_cast<Index>(rows.size());
  const double normalizer = std::max<double>(1.0, static_cast<double>(rows.size()));
  const ad::Var cls = sigmoid_focal_loss(in.class_logits, cls_targets, config.focal_alpha, config.focal_gamma, normalizer);
  const ad::Var box = diou_loss(in.boxes, rows, box_targets);
  const ad::Var cntr = centerness_loss(in.centerness_logit, rows, cntr_targets);
  out.total = ad::add(ad::add(ad::scale(in.vote_loss, config.beta_vote), ad::scale(cntr, config.beta_cntr)),
                      ad::add(ad::scale(box, config.beta_box), ad::scale(cls, config.beta_cls)));
  out.vote = in.vote_loss.value()(0, 0);
  out.cntr = cntr.value()(0, 0);
  out.box = box.value()(0, 0);
  out.cls = cls.value()(0, 0);
  out.total_value = out.total.value()(0, 0);
  return out;
}

}  // namespace spg
