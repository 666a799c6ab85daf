#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/config.hpp"
#include "spg/evaluation.hpp"
#include "spg/grouping.hpp"
#include "spg/head.hpp"
#include "spg/matching.hpp"
#include "spg/params.hpp"
#include "spg/scene.hpp"
#include "spg/superpoint.hpp"
#include "spg/voting.hpp"
#include "spg/voxel_grid.hpp"

namespace spg {

// Every parameter of the network for `config`, drawn from `seed`.
ParamStore init_model(const PipelineConfig& config, std::uint64_t seed);

// Everything derived from a scene that does not depend on parameters.
struct PreparedScene {
  SparseVoxelSet voxels;
  SuperpointPartition partition;
  Matrix seed_positions;    // M x 3 voxel centers
  Matrix featurizer_input;  // M x 6: [center - origin, mean color]
  SceneFrame frame;
  std::vector<LabeledBox> ground_truth;
};

// Uses the scene's own superpoint labels when present, otherwise segments.
PreparedScene prepare_scene(const Scene& scene, const PipelineConfig& config);
PreparedScene prepare_scene(const Scene& scene, SuperpointPartition partition, const PipelineConfig& config);

struct ForwardTrace {
  ad::Var seed_features;
  VoteOutput votes;
  MergedSet merged;
  GroupingOutput grouping;
  HeadOutput head;
  ad::Var boxes;  // L x 6 decoded (center, size)
  std::vector<Proposal> proposals;  // one per superpoint, in superpoint order
  std::vector<std::pair<std::string, double>> timings;  // stage -> seconds
};

ForwardTrace forward(ParamBinder& p, const PreparedScene& scene, const PipelineConfig& config);

struct SceneLoss {
  LossBreakdown breakdown;
  Assignment assignment;
};

// Matching and loss on top of a forward pass (no backward).
SceneLoss scene_loss(const ForwardTrace& trace, const PreparedScene& scene, const PipelineConfig& config);

struct StepResult {
  double total = 0.0;
  double vote = 0.0;
  double cntr = 0.0;
  double box = 0.0;
  double cls = 0.0;
  Index positives = 0;
};

// Mean loss over `scenes` and its parameter gradient, summed in scene order.
StepResult loss_and_gradients(std::span<const PreparedScene> scenes, const ParamStore& params,
                              const PipelineConfig& config, GradMap* grads);

// One AdamW step on the mean loss over `scenes` at rate `lr`.
StepResult train_step(std::span<const PreparedScene> scenes, ParamStore& params, AdamState& state,
                      const PipelineConfig& config, double lr);

// Score fusion, score floor, ranking and class-wise NMS.
std::vector<Detection> infer(const PreparedScene& scene, const ParamStore& params, const PipelineConfig& config);
std::vector<Detection> select_detections(std::vector<Proposal> proposals, const PipelineConfig& config);

}  // namespace spg
