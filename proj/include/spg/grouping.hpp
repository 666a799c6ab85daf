#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/config.hpp"
#include "spg/params.hpp"
#include "spg/superpoint.hpp"
#include "spg/voting.hpp"

namespace spg {

// Superpoint centroids stay fixed while features are refined.
struct SuperpointState {
  ad::Var centroids;  // L x 3
  ad::Var features;   // L x C_i
  int iteration = 0;
};

// Scene extent used to min-max normalize centroid coordinates.
struct SceneFrame {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  // Subtracted from coordinates before they enter feature space.
  Vec3 origin = Vec3::Zero();
};

// Min-max normalization per axis; axes with zero extent map to 0.5.
Matrix normalize_coords(const Matrix& coords, const SceneFrame& frame);

struct HiddenState {
  ad::Var centroids;  // L x 3, meters
  ad::Var hidden;     // L x (C + 6): [mean feature, centroid - origin, normalized centroid]
  std::vector<Index> empty_superpoints;
};

HiddenState init_hidden(const MergedSet& merged, Index superpoints, const SceneFrame& frame);

struct AttentionOptions {
  AttentionMode mode = AttentionMode::kFull;
  AttentionReduction reduction = AttentionReduction::kChannelSum;
  double eps = 1e-5;
};

// Registers `<prefix>.{coord,feat,value,res,norm}` for in -> out widths.
// `res` exists only when the widths differ.
void add_attention(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng);

// Fused neighbour weights from the last attention call: (L*k) x 1 for the
// channel-sum reduction, (L*k) x C for per-channel, rows grouped by superpoint
// with neighbours in ascending id order.
struct AttentionTrace {
  Matrix fused;
  Index superpoints = 0;
  int k = 0;
};

SuperpointState superpoint_attention(ParamBinder& p, const std::string& prefix, const SuperpointState& state,
                                     const NeighbourTable& neighbours, const AttentionOptions& options,
                                     AttentionTrace* trace = nullptr);

struct FusionOptions {
  double output_voxel_size = 0.04;
  int kernel_size = 3;
  double eps = 1e-5;
};

// Registers `<prefix>.conv.{weight,bias}` and `<prefix>.norm`: (element + superpoint) -> out widths.
void add_fusion(ParamStore& store, const std::string& prefix, Index element_width, Index superpoint_width,
                Index out, int kernel_size, Rng& rng);

// Broadcast superpoint features to elements, concat, re-voxelize at the output
// resolution, sparse conv + norm + elu, then map back to elements.
ad::Var superpoint_voxel_fusion(ParamBinder& p, const std::string& prefix, const SuperpointState& state,
                                const MergedSet& merged, const FusionOptions& options);

struct GroupingOutput {
  HiddenState initial;
  std::vector<ad::Var> iteration_outputs;
  std::vector<Matrix> iteration_centroids;
  std::vector<AttentionTrace> attention;
  NeighbourTable neighbours;
  ad::Var head_input;
};

void add_grouping_stack(ParamStore& store, const PipelineConfig& config, Rng& rng);

GroupingOutput run_grouping_stack(ParamBinder& p, const MergedSet& merged, Index superpoints,
                                  const SceneFrame& frame, const PipelineConfig& config);

}  // namespace spg
