#include "spg/voting.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "spg/error.hpp"
#include "spg/nn.hpp"

namespace spg {

void add_vote_branch(ParamStore& store, Index channels, Rng& rng) {
  for (int i = 0; i < 3; ++i) nn::add_dense_block(store, "vote.l" + std::to_string(i), channels, channels, rng);
  add_linear(store, "vote.out", channels, channels + 3, rng);
}

VoteOutput vote_branch(ParamBinder& p, ad::Var seed_features, double eps) {
  const Index c = p.tape().value(p("vote.out.weight")).rows();
  if (seed_features.cols() != c)
    throw ValidationError("vote_branch: seed features have " + std::to_string(seed_features.cols()) +
                          " channels, branch expects " + std::to_string(c));
  ad::Var h = seed_features;
  for (int i = 0; i < 3; ++i) h = nn::dense_block(p, "vote.l" + std::to_string(i), h, eps);
  const ad::Var out = nn::linear(p, "vote.out", h);
  return {ad::slice_cols(out, 0, 3), ad::slice_cols(out, 3, c)};
}

VoteSet apply_votes(ad::Var seed_positions, ad::Var seed_features, const VoteOutput& out) {
  return {ad::add(seed_positions, out.coord_offsets), ad::add(seed_features, out.feature_offsets)};
}

MergedSet merge_seed_vote(ad::Var seed_positions, ad::Var seed_features, const VoteSet& votes,
                          const std::vector<std::int64_t>& voxel_labels, MergeMode mode) {
  const Index m = seed_positions.rows();
  if (votes.positions.rows() != m || seed_features.rows() != m || votes.features.rows() != m ||
      static_cast<Index>(voxel_labels.size()) != m)
    throw ValidationError("merge_seed_vote: seed, vote and label counts differ");
  MergedSet merged;
  if (mode == MergeMode::kVotesOnly) {
    merged.positions = votes.positions;
    merged.features = votes.features;
    merged.labels = voxel_labels;
    merged.source.assign(static_cast<std::size_t>(m), ElementSource::kVote);
    merged.seed_count = 0;
    return merged;
  }
  const ad::Var pos[2] = {seed_positions, votes.positions};
  const ad::Var feat[2] = {seed_features, votes.features};
  merged.positions = ad::concat_rows(pos);
  merged.features = ad::concat_rows(feat);
  merged.labels = voxel_labels;
  merged.labels.insert(merged.labels.end(), voxel_labels.begin(), voxel_labels.end());
  merged.source.assign(static_cast<std::size_t>(m), ElementSource::kSeed);
  merged.source.resize(static_cast<std::size_t>(2 * m), ElementSource::kVote);
  merged.seed_count = m;
  return merged;
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

Matrix vote_targets(const Matrix& seed_positions, const std::vector<LabeledBox>& boxes) {
  Matrix targets = Matrix::Constant(seed_positions.rows(), 3, std::numeric_limits<double>::quiet_NaN());
  for (Index i = 0; i < seed_positions.rows(); ++i) {
    const Vec3 p = seed_positions.row(i).transpose();
    double best = std::numeric_limits<double>::infinity();
    for (const LabeledBox& b : boxes) {
      if (!b.box.contains(p)) continue;
      const double d = (b.box.center - p).squaredNorm();
      if (d < best) {
        best = d;
        targets.row(i) = (b.box.center - p).transpose();
      }
    }
  }
  return targets;
}

VoteLoss vote_loss(ad::Var coord_offsets, const Matrix& seed_positions, const std::vector<LabeledBox>& boxes) {
  if (coord_offsets.rows() != seed_positions.rows() || coord_offsets.cols() != 3)
    throw ValidationError("vote_loss: offsets must be M x 3 matching the seeds");
  const Matrix targets = vote_targets(seed_positions, boxes);
  const Matrix& pred = coord_offsets.value();
  VoteLoss result;
  double total = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) {
    if (std::isnan(targets(i, 0))) continue;
    ++result.supervised;
    for (int a = 0; a < 3; ++a) total += smooth_l1(pred(i, a) - targets(i, a));
  }
  result.empty_mask = result.supervised == 0;
  const double n = static_cast<double>(std::max<Index>(result.supervised, 1));
  Matrix value(1, 1);
  value(0, 0) = result.empty_mask ? 0.0 : total / n;
  ad::Tape& t = *coord_offsets.tape;
  result.loss = t.record(std::move(value), t.requires_grad(coord_offsets),
                         [coord_offsets, targets, n](ad::Tape& tp, const Matrix& g) {
                           const Matrix& pv = coord_offsets.value();
                           Matrix grad = Matrix::Zero(pv.rows(), 3);
                           for (Index i = 0; i < pv.rows(); ++i) {
                             if (std::isnan(targets(i, 0))) continue;
                             for (int a = 0; a < 3; ++a) {
                               const double d = pv(i, a) - targets(i, a);
                               grad(i, a) = (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) * g(0, 0) / n;
                             }
                           }
                           tp.accumulate(coord_offsets, grad);
                         });
  return result;
}

}  // namespace spg
