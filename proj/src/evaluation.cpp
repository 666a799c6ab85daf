#include "spg/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "json.hpp"

namespace spg {

double iou3d(const Box3& a, const Box3& b) {
  const Vec3 lo = a.min().cwiseMax(b.min());
  const Vec3 hi = a.max().cwiseMin(b.max());
  const Vec3 overlap = (hi - lo).cwiseMax(0.0);
  const double inter = overlap.prod();
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double all_point_ap(const std::vector<bool>& tp_flags, int positives, PrCurve* curve) {
  PrCurve local;
  PrCurve& c = curve ? *curve : local;
  c.recall.clear();
  c.precision.clear();
  if (positives <= 0) return 0.0;
  int tp = 0;
  for (std::size_t i = 0; i < tp_flags.size(); ++i) {
    if (tp_flags[i]) ++tp;
    c.recall.push_back(static_cast<double>(tp) / positives);
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  std::vector<double> envelope = c.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    ap += (c.recall[i] - prev_recall) * envelope[i];
    prev_recall = c.recall[i];
  }
  return ap;
}

namespace {

struct Ranked {
  const Detection* det;
  std::size_t scene;
  std::size_t order;
};

ApResult rank_and_match(std::vector<Ranked> ranked, const std::vector<std::vector<Box3>>& gts_per_scene,
                        double iou_threshold) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.det->score != b.det->score) return a.det->score > b.det->score;
    return a.order < b.order;
  });
  int positives = 0;
  std::vector<std::vector<bool>> used;
  for (const auto& g : gts_per_scene) {
    positives += static_cast<int>(g.size());
    used.emplace_back(g.size(), false);
  }
  std::vector<bool> flags;
  ApResult result;
  for (const Ranked& r : ranked) {
    const auto& gts = gts_per_scene[r.scene];
    double best = -1.0;
    std::size_t best_idx = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[r.scene][g]) continue;
      const double iou = iou3d(r.det->box, gts[g]);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        best_idx = g;
      }
    }
    const bool tp = best_idx < gts.size();
    if (tp) used[r.scene][best_idx] = true;
    flags.push_back(tp);
    (tp ? result.true_positives : result.false_positives)++;
  }
  result.ap = all_point_ap(flags, positives, &result.curve);
  return result;
}

}  // namespace

ApResult average_precision(const std::vector<Detection>& detections, const std::vector<Box3>& gts,
                           double iou_threshold) {
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < detections.size(); ++i) ranked.push_back({&detections[i], 0, i});
  return rank_and_match(std::move(ranked), {gts}, iou_threshold);
}

EvalResult evaluate(const std::vector<SceneDetections>& scenes, const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const auto& s : scenes)
    for (const auto& g : s.ground_truth) classes.insert(g.class_id);

  EvalResult result;
  result.thresholds = thresholds;
  for (double thr : thresholds) {
    std::map<int, ApResult> per_class;
    for (int cls : classes) {
      std::vector<std::vector<Box3>> gts(scenes.size());
      std::vector<Ranked> ranked;
      std::size_t order = 0;
      for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (const auto& g : scenes[s].ground_truth)
          if (g.class_id == cls) gts[s].push_back(g.box);
        for (const auto& d : scenes[s].detections)
          if (d.class_id == cls) ranked.push_back({&d, s, order++});
      }
      per_class.emplace(cls, rank_and_match(std::move(ranked), gts, thr));
    }
    double mean = 0.0;
    for (const auto& [_, ap] : per_class) mean += ap.ap;
    result.map.push_back(per_class.empty() ? 0.0 : mean / static_cast<double>(per_class.size()));
    result.per_class.push_back(std::move(per_class));
  }
  return result;
}

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["thresholds"] = thresholds;
  j["map"] = map;
  j["per_class"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < per_class.size(); ++t) {
    nlohmann::ordered_json level = nlohmann::ordered_json::array();
    for (const auto& [cls, ap] : per_class[t]) {
      nlohmann::ordered_json entry;
      entry["class_id"] = cls;
      entry["ap"] = ap.ap;
      entry["recall"] = ap.curve.recall;
      entry["precision"] = ap.curve.precision;
      level.push_back(entry);
    }
    j["per_class"].push_back(level);
  }
  return j.dump(1);
}

}  // namespace spg
