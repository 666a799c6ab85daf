#include "spg/head.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "spg/error.hpp"
#include "spg/nn.hpp"

namespace spg {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void add_head(ParamStore& store, Index input_width, Index hidden, int classes, Rng& rng) {
  nn::add_dense_block(store, "head.shared0", input_width, hidden, rng);
  nn::add_dense_block(store, "head.shared1", hidden, hidden, rng);
  add_linear(store, "head.cls", hidden, classes, rng);
  add_linear(store, "head.reg", hidden, 6, rng);
  add_linear(store, "head.cntr", hidden, 1, rng);
}

HeadOutput head_forward(ParamBinder& p, ad::Var features, double eps) {
  const Index expected = p.tape().value(p("head.shared0.weight")).rows();
  if (features.cols() != expected)
    throw ValidationError("head_forward: input width " + std::to_string(features.cols()) + ", head expects " +
                          std::to_string(expected));
  ad::Var h = nn::dense_block(p, "head.shared0", features, eps);
  h = nn::dense_block(p, "head.shared1", h, eps);
  return {nn::linear(p, "head.cls", h), nn::linear(p, "head.reg", h), nn::linear(p, "head.cntr", h)};
}

Box3 decode_box(const Vec3& origin, const std::array<double, 6>& raw) {
  Box3 b;
  for (int a = 0; a < 3; ++a) {
    const double dm = std::exp(raw[static_cast<std::size_t>(2 * a)]);
    const double dp = std::exp(raw[static_cast<std::size_t>(2 * a + 1)]);
    b.center[a] = origin[a] + 0.5 * (dp - dm);
    b.size[a] = dm + dp;
  }
  return b;
}

std::array<double, 6> encode_box(const Vec3& origin, const Box3& box) {
  std::array<double, 6> raw{};
  const Vec3 lo = box.min();
  const Vec3 hi = box.max();
  for (int a = 0; a < 3; ++a) {
    raw[static_cast<std::size_t>(2 * a)] = std::log(origin[a] - lo[a]);
    raw[static_cast<std::size_t>(2 * a + 1)] = std::log(hi[a] - origin[a]);
  }
  return raw;
}

ad::Var decode_boxes(ad::Var origins, ad::Var reg_raw) {
  if (origins.cols() != 3 || reg_raw.cols() != 6 || origins.rows() != reg_raw.rows())
    throw ValidationError("decode_boxes: need L x 3 origins and L x 6 regressions");
  const Matrix dist = reg_raw.value().array().exp();
  Matrix out(origins.rows(), 6);
  for (Index i = 0; i < out.rows(); ++i) {
    for (int a = 0; a < 3; ++a) {
      out(i, a) = origins.value()(i, a) + 0.5 * (dist(i, 2 * a + 1) - dist(i, 2 * a));
      out(i, 3 + a) = dist(i, 2 * a) + dist(i, 2 * a + 1);
    }
  }
  ad::Tape& t = *origins.tape;
  return t.record(std::move(out), t.requires_grad(origins) || t.requires_grad(reg_raw),
                  [origins, reg_raw, dist](ad::Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(origins)) tp.accumulate(origins, g.leftCols(3));
                    if (tp.requires_grad(reg_raw)) {
                      Matrix gr(dist.rows(), 6);
                      for (Index i = 0; i < dist.rows(); ++i) {
                        for (int a = 0; a < 3; ++a) {
                          gr(i, 2 * a) = (-0.5 * g(i, a) + g(i, 3 + a)) * dist(i, 2 * a);
                          gr(i, 2 * a + 1) = (0.5 * g(i, a) + g(i, 3 + a)) * dist(i, 2 * a + 1);
                        }
                      }
                      tp.accumulate(reg_raw, gr);
                    }
                  });
}

ScoredClass fuse_score(const Eigen::Ref<const Eigen::RowVectorXd>& class_logits, double centerness_logit) {
  ScoredClass out;
  Index best = 0;
  for (Index c = 1; c < class_logits.size(); ++c)
    if (class_logits[c] > class_logits[best]) best = c;
  out.class_id = static_cast<int>(best);
  out.score = sigmoid(class_logits[best]) * sigmoid(centerness_logit);
  return out;
}

void rank_proposals(std::vector<Proposal>& proposals) {
  std::stable_sort(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.superpoint < b.superpoint;
  });
}

std::vector<std::size_t> nms3d(const std::vector<Proposal>& proposals, double iou_threshold) {
  std::vector<std::size_t> kept;
  std::vector<bool> removed(proposals.size(), false);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (removed[i]) continue;
    if (!std::isfinite(proposals[i].score)) throw ValidationError("nms3d: non-finite score");
    kept.push_back(i);
    for (std::size_t j = i + 1; j < proposals.size(); ++j) {
      if (removed[j] || proposals[j].class_id != proposals[i].class_id) continue;
      if (iou3d(proposals[i].box, proposals[j].box) > iou_threshold) removed[j] = true;
    }
  }
  return kept;
}

std::string detections_to_json(const std::vector<Detection>& detections) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const Detection& d : detections) {
    nlohmann::ordered_json e;
    e["box"] = {{"center", {d.box.center.x(), d.box.center.y(), d.box.center.z()}},
                {"size", {d.box.size.x(), d.box.size.y(), d.box.size.z()}}};
    e["class_id"] = d.class_id;
    e["score"] = d.score;
    j.push_back(e);
  }
  return j.dump(1);
}

std::vector<Detection> detections_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("detections: ") + e.what(), e.byte);
  }
  std::vector<Detection> out;
  try {
    for (const auto& e : j) {
      Detection d;
      const auto& c = e.at("box").at("center");
      const auto& s = e.at("box").at("size");
      d.box.center = Vec3(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
      d.box.size = Vec3(s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>());
      d.class_id = e.at("class_id").get<int>();
      d.score = e.at("score").get<double>();
      out.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("detections: ") + e.what());
  }
  return out;
}

}  // namespace spg
