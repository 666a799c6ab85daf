#include "spg/pipeline.hpp"

#include <chrono>

#include "spg/error.hpp"
#include "spg/nn.hpp"

namespace spg {

namespace {

template <typename F>
auto run_stage(std::vector<std::pair<std::string, double>>& timings, const char* name, F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } else {
      auto result = fn();
      timings.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      return result;
    }
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(name) + ": " + e.what());
  }
}

}  // namespace

ParamStore init_model(const PipelineConfig& config, std::uint64_t seed) {
  validate_config(config);
  ParamStore store;
  Rng rng(seed);
  nn::add_featurizer(store, config.channels, rng);
  add_vote_branch(store, config.channels, rng);
  add_grouping_stack(store, config, rng);
  add_head(store, config.head_input_width(), config.head_hidden, config.class_count, rng);
  return store;
}

PreparedScene prepare_scene(const Scene& scene, const PipelineConfig& config) {
  SuperpointPartition part =
      scene.superpoint_labels ? load_partition(scene) : segment_points(scene.cloud, config.segment);
  return prepare_scene(scene, std::move(part), config);
}

PreparedScene prepare_scene(const Scene& scene, SuperpointPartition partition, const PipelineConfig& config) {
  require_valid(scene);
  if (static_cast<Index>(partition.point_labels.size()) != scene.cloud.size())
    throw ValidationError("prepare_scene: partition covers " + std::to_string(partition.point_labels.size()) +
                          " points, scene has " + std::to_string(scene.cloud.size()));
  PreparedScene out;
  out.voxels = voxelize(scene.cloud, config.voxel_size);
  out.partition = std::move(partition);
  attach_voxels(out.partition, out.voxels.point_to_voxel, out.voxels.size());
  out.seed_positions = out.voxels.centers();
  const auto [lo, hi] = cloud_bounds(scene.cloud);
  out.frame.min = lo;
  out.frame.max = hi;
  out.frame.origin = config.normalize_positions ? lo : Vec3::Zero();
  out.featurizer_input.resize(out.voxels.size(), 6);
  out.featurizer_input.leftCols(3) = out.seed_positions.rowwise() - out.frame.origin.transpose();
  out.featurizer_input.rightCols(3) = out.voxels.features;
  out.ground_truth = scene.ground_truth;
  return out;
}

ForwardTrace forward(ParamBinder& p, const PreparedScene& scene, const PipelineConfig& config) {
  ForwardTrace t;
  ad::Tape& tape = p.tape();
  const ad::Var seed_pos = tape.constant(scene.seed_positions);
  t.seed_features =
      run_stage(t.timings, "featurize", [&] { return nn::featurize(p, tape.constant(scene.featurizer_input)); });
  t.merged = run_stage(t.timings, "vote", [&] {
    t.votes = vote_branch(p, t.seed_features, config.norm_eps);
    const VoteSet votes = apply_votes(seed_pos, t.seed_features, t.votes);
    return merge_seed_vote(seed_pos, t.seed_features, votes, scene.partition.voxel_labels, config.merge_mode);
  });
  t.grouping = run_stage(t.timings, "grouping", [&] {
    return run_grouping_stack(p, t.merged, scene.partition.count, scene.frame, config);
  });
  t.head = run_stage(t.timings, "head", [&] { return head_forward(p, t.grouping.head_input, config.norm_eps); });
  run_stage(t.timings, "decode", [&] {
    t.boxes = decode_boxes(t.grouping.initial.centroids, t.head.reg_raw);
    const Matrix& b = t.boxes.value();
    const Matrix& cls = t.head.class_logits.value();
    const Matrix& cn = t.head.centerness_logit.value();
    t.proposals.resize(static_cast<std::size_t>(b.rows()));
    for (Index i = 0; i < b.rows(); ++i) {
      Proposal& pr = t.proposals[static_cast<std::size_t>(i)];
      pr.superpoint = i;
      pr.box.center = b.row(i).head<3>().transpose();
      pr.box.size = b.row(i).tail<3>().transpose();
      pr.class_logits.assign(cls.row(i).data(), cls.row(i).data() + cls.cols());
      pr.centerness_logit = cn(i, 0);
      const ScoredClass s = fuse_score(cls.row(i), cn(i, 0));
      pr.class_id = s.class_id;
      pr.score = s.score;
    }
  });
  return t;
}

SceneLoss scene_loss(const ForwardTrace& trace, const PreparedScene& scene, const PipelineConfig& config) {
  const Matrix probs = trace.head.class_logits.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  std::vector<Box3> boxes;
  boxes.reserve(trace.proposals.size());
  for (const Proposal& pr : trace.proposals) boxes.push_back(pr.box);
  const Matrix centroids = trace.grouping.initial.centroids.value();
  const CostMatrix costs = build_cost_matrix(boxes, probs, centroids, scene.ground_truth, config.lambda_cls,
                                             config.lambda_reg, config.focal_alpha, config.focal_gamma);
  SceneLoss out;
  out.assignment = multiple_match(costs, config.top_r);
  const VoteLoss vl = vote_loss(trace.votes.coord_offsets, scene.seed_positions, scene.ground_truth);
  const LossInputs in{trace.head.class_logits, trace.boxes, trace.head.centerness_logit, centroids, vl.loss};
  out.breakdown = total_loss(in, out.assignment, scene.ground_truth, config);
  return out;
}

StepResult loss_and_gradients(std::span<const PreparedScene> scenes, const ParamStore& params,
                              const PipelineConfig& config, GradMap* grads) {
  if (scenes.empty()) throw ValidationError("loss_and_gradients: no scenes");
  StepResult r;
  const double w = 1.0 / static_cast<double>(scenes.size());
  if (grads) grads->clear();
  for (const PreparedScene& scene : scenes) {
    ad::Tape tape;
    ParamBinder p(tape, params);
    const ForwardTrace trace = forward(p, scene, config);
    const SceneLoss sl = scene_loss(trace, scene, config);
    const LossBreakdown& b = sl.breakdown;
    r.total += w * b.total_value;
    r.vote += w * b.vote;
    r.cntr += w * b.cntr;
    r.box += w * b.box;
    r.cls += w * b.cls;
    r.positives += b.positives;
    if (grads) {
      tape.backward(ad::scale(b.total, w));
      accumulate_grads(*grads, p.gradients());
    }
  }
  return r;
}

StepResult train_step(std::span<const PreparedScene> scenes, ParamStore& params, AdamState& state,
                      const PipelineConfig& config, double lr) {
  GradMap grads;
  const StepResult r = loss_and_gradients(scenes, params, config, &grads);
  AdamOptions opt;
  opt.lr = lr;
  opt.weight_decay = config.weight_decay;
  adam_step(params, grads, state, opt);
  return r;
}

std::vector<Detection> select_detections(std::vector<Proposal> proposals, const PipelineConfig& config) {
  std::erase_if(proposals, [&](const Proposal& pr) { return !(pr.score >= config.score_floor); });
  rank_proposals(proposals);
  std::vector<Detection> out;
  for (std::size_t i : nms3d(proposals, config.nms_iou))
    out.push_back({proposals[i].box, proposals[i].class_id, proposals[i].score});
  return out;
}

std::vector<Detection> infer(const PreparedScene& scene, const ParamStore& params, const PipelineConfig& config) {
  ad::Tape tape;
  ParamBinder p(tape, params);
  return select_detections(forward(p, scene, config).proposals, config);
}

}  // namespace spg
