#pragma once

#include <cstdint>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/config.hpp"
#include "spg/params.hpp"
#include "spg/scene.hpp"

namespace spg {

struct VoteOutput {
  ad::Var coord_offsets;    // M x 3, meters
  ad::Var feature_offsets;  // M x C
};

// Three linear+norm+elu blocks then a plain linear to C + 3 channels:
// the first 3 are the coordinate offset, the rest the feature offset.
void add_vote_branch(ParamStore& store, Index channels, Rng& rng);
VoteOutput vote_branch(ParamBinder& p, ad::Var seed_features, double eps = 1e-5);

struct VoteSet {
  ad::Var positions;  // M x 3
  ad::Var features;   // M x C
};

// o^c = v^c + dv^c, o^f = v^f + dv^f.
VoteSet apply_votes(ad::Var seed_positions, ad::Var seed_features, const VoteOutput& out);

enum class ElementSource : std::uint8_t { kSeed, kVote };

// Seeds followed by votes; vote row i + M inherits the label of seed row i.
struct MergedSet {
  ad::Var positions;
  ad::Var features;
  std::vector<std::int64_t> labels;
  std::vector<ElementSource> source;
  Index seed_count = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
};

MergedSet merge_seed_vote(ad::Var seed_positions, ad::Var seed_features, const VoteSet& votes,
                          const std::vector<std::int64_t>& voxel_labels, MergeMode mode = MergeMode::kGeometryAware);

struct VoteLoss {
  ad::Var loss;  // 1 x 1
  Index supervised = 0;
  bool empty_mask = false;
};

// Per-seed regression target: nearest containing box center minus the seed
// position. Rows with no containing box are NaN.
Matrix vote_targets(const Matrix& seed_positions, const std::vector<LabeledBox>& boxes);

// Smooth-L1 (delta 1) summed over xyz, averaged over seeds inside some box.
VoteLoss vote_loss(ad::Var coord_offsets, const Matrix& seed_positions, const std::vector<LabeledBox>& boxes);

double smooth_l1(double d);

}  // namespace spg
