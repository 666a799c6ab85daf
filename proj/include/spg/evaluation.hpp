#pragma once

#include <map>
#include <string>
#include <vector>

#include "spg/scene.hpp"

namespace spg {

double iou3d(const Box3& a, const Box3& b);

struct Detection {
  Box3 box;
  int class_id = 0;
  double score = 0.0;
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
};

struct ApResult {
  double ap = 0.0;
  PrCurve curve;
  int true_positives = 0;
  int false_positives = 0;
};

// One class within one scene. Detections are ranked by descending score (ties
// by index); each takes the highest-IoU unmatched box with IoU >= threshold.
// AP is the area under the monotone precision envelope (all-point).
ApResult average_precision(const std::vector<Detection>& detections, const std::vector<Box3>& gts,
                           double iou_threshold);

// Per-scene detections and ground truth, pooled per class across scenes.
struct SceneDetections {
  std::vector<Detection> detections;
  std::vector<LabeledBox> ground_truth;
};

struct EvalResult {
  std::vector<double> thresholds;
  // threshold index -> class id -> AP (classes with at least one box only)
  std::vector<std::map<int, ApResult>> per_class;
  std::vector<double> map;

  std::string to_json() const;
};

EvalResult evaluate(const std::vector<SceneDetections>& scenes, const std::vector<double>& thresholds = {0.25, 0.5});

// Area under the all-point interpolated PR curve given per-rank TP flags.
double all_point_ap(const std::vector<bool>& tp_flags, int positives, PrCurve* curve = nullptr);

}  // namespace spg
