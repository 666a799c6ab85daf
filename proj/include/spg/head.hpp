#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/evaluation.hpp"
#include "spg/params.hpp"
#include "spg/scene.hpp"

namespace spg {

struct HeadOutput {
  ad::Var class_logits;      // L x K
  ad::Var reg_raw;           // L x 6, log face distances (x-, x+, y-, y+, z-, z+)
  ad::Var centerness_logit;  // L x 1
};

// Two shared linear+norm+elu layers, then class / box / centerness linears.
void add_head(ParamStore& store, Index input_width, Index hidden, int classes, Rng& rng);
HeadOutput head_forward(ParamBinder& p, ad::Var features, double eps = 1e-5);

// Face distances d = exp(raw); center = origin + (d+ - d-) / 2; size = d- + d+.
Box3 decode_box(const Vec3& origin, const std::array<double, 6>& raw);
// Inverse of decode_box for an origin inside the box.
std::array<double, 6> encode_box(const Vec3& origin, const Box3& box);
// Differentiable decode for all rows: returns L x 6 (center, size).
ad::Var decode_boxes(ad::Var origins, ad::Var reg_raw);

struct ScoredClass {
  int class_id = 0;
  double score = 0.0;
};

// score = max_c sigmoid(cls_c) * sigmoid(centerness); class = argmax (first on ties).
ScoredClass fuse_score(const Eigen::Ref<const Eigen::RowVectorXd>& class_logits, double centerness_logit);

struct Proposal {
  std::int64_t superpoint = 0;
  Box3 box;
  std::vector<double> class_logits;
  double centerness_logit = 0.0;
  int class_id = 0;
  double score = 0.0;
};

// Greedy class-wise suppression. Input order is the ranking: callers sort by
// descending score (ties by index). Returns kept positions into `proposals`.
std::vector<std::size_t> nms3d(const std::vector<Proposal>& proposals, double iou_threshold);

// Sorts by descending score, ties by superpoint id.
void rank_proposals(std::vector<Proposal>& proposals);

std::string detections_to_json(const std::vector<Detection>& detections);
std::vector<Detection> detections_from_json(const std::string& text);

}  // namespace spg
