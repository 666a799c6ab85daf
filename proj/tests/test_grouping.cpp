#include <gtest/gtest.h>

#include <algorithm>

#include "spg/error.hpp"
#include "spg/grouping.hpp"
#include "spg/nn.hpp"
#include "spg/voxel_grid.hpp"

using namespace spg;

namespace {

Matrix rand_mat(Rng& rng, Index r, Index c, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

MergedSet random_merged(ad::Tape& t, Rng& rng, Index m, Index c, Index l) {
  const Matrix pos = rand_mat(rng, m, 3, 0, 1);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) labels[static_cast<std::size_t>(i)] = i < l ? i : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(l)));
  const auto sp = t.constant(pos);
  const auto sf = t.constant(rand_mat(rng, m, c));
  const VoteSet v{t.constant(pos + rand_mat(rng, m, 3, -0.1, 0.1)), t.constant(rand_mat(rng, m, c))};
  return merge_seed_vote(sp, sf, v, labels);
}

}  // namespace

TEST(InitHidden, WidthAndBlocks) {
  Rng rng(1);
  ad::Tape t;
  const MergedSet m = random_merged(t, rng, 40, 64, 6);
  const SceneFrame frame{Vec3::Zero(), Vec3::Ones(), Vec3(0.1, 0.2, 0.3)};
  const HiddenState h = init_hidden(m, 6, frame);
  ASSERT_EQ(h.hidden.cols(), 70);
  const Matrix feat = scatter_mean(m.features.value(), m.labels, 6);
  const Matrix cen = scatter_mean(m.positions.value(), m.labels, 6);
  EXPECT_LT((h.hidden.value().leftCols(64) - feat).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((h.hidden.value().middleCols(64, 3) - (cen.rowwise() - frame.origin.transpose())).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((h.hidden.value().rightCols(3) - cen).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(InitHidden, SceneCenterAndDegenerateAxis) {
  const SceneFrame frame{Vec3(0, 0, 1), Vec3(2, 4, 1), Vec3::Zero()};
  const Matrix n = normalize_coords((Matrix(1, 3) << 1, 2, 1).finished(), frame);
  EXPECT_EQ(n, (Matrix(1, 3) << 0.5, 0.5, 0.5).finished());
}

TEST(Attention, SingleNeighbourWeightIsOne) {
  Rng rng(2);
  ParamStore store;
  add_attention(store, "a", 5, 4, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  const SuperpointState s{t.constant(rand_mat(rng, 3, 3)), t.constant(rand_mat(rng, 3, 5)), 0};
  const NeighbourTable nb = knn_superpoints(s.centroids.value(), 1);
  AttentionTrace trace;
  const auto out = superpoint_attention(p, "a", s, nb, AttentionOptions{}, &trace);
  EXPECT_EQ(trace.fused, Matrix::Ones(3, 1));
  // layer_norm(value(n) + res(s))
  const Matrix value = s.features.value() * store.get("a.value.weight");
  for (Index i = 0; i < 3; ++i) {
    Matrix row = value.row(nb.at(i, 0)) + store.get("a.value.bias") + s.features.value().row(i) * store.get("a.res.weight") +
                 store.get("a.res.bias");
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const Matrix expect = (row.array() - mu) / std::sqrt(var + 1e-5);
    EXPECT_LT((out.features.value().row(i) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Attention, IdenticalLogitsAreUniform) {
  Rng rng(3);
  ParamStore store;
  add_attention(store, "a", 4, 4, rng);
  // A zero coordinate branch makes every logit 0.
  store.set("a.coord.weight", Matrix::Zero(3, 4));
  store.set("a.coord.bias", Matrix::Zero(1, 4));
  ad::Tape t;
  ParamBinder p(t, store);
  const SuperpointState s{t.constant(rand_mat(rng, 10, 3)), t.constant(rand_mat(rng, 10, 4)), 0};
  AttentionTrace trace;
  superpoint_attention(p, "a", s, knn_superpoints(s.centroids.value(), 8), AttentionOptions{}, &trace);
  ASSERT_EQ(trace.fused.rows(), 80);
  EXPECT_LT((trace.fused.array() - 0.125).abs().maxCoeff(), 1e-15);
}

TEST(Attention, SimplexRowsAndPermutationInvariance) {
  Rng rng(4);
  ParamStore store;
  add_attention(store, "a", 6, 5, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  const SuperpointState s{t.constant(rand_mat(rng, 12, 3)), t.constant(rand_mat(rng, 12, 6)), 0};
  NeighbourTable nb = knn_superpoints(s.centroids.value(), 4);
  AttentionTrace trace;
  const Matrix a = superpoint_attention(p, "a", s, nb, AttentionOptions{}, &trace).features.value();
  for (Index i = 0; i < 12; ++i) {
    const auto block = trace.fused.middleRows(i * 4, 4);
    EXPECT_NEAR(block.sum(), 1.0, 1e-12);
    EXPECT_GE(block.minCoeff(), 0.0);
  }
  for (Index i = 0; i < 12; ++i) std::reverse(nb.indices.begin() + i * 4, nb.indices.begin() + (i + 1) * 4);
  const Matrix b = superpoint_attention(p, "a", s, nb, AttentionOptions{}).features.value();
  EXPECT_EQ(a, b);
}

TEST(Attention, TranslationInvariant) {
  Rng rng(5);
  ParamStore store;
  add_attention(store, "a", 4, 4, rng);
  const Matrix c = rand_mat(rng, 8, 3);
  const Matrix f = rand_mat(rng, 8, 4);
  auto run = [&](const Matrix& cen) {
    ad::Tape t;
    ParamBinder p(t, store);
    const SuperpointState s{t.constant(cen), t.constant(f), 0};
    return Matrix(superpoint_attention(p, "a", s, knn_superpoints(cen, 3), AttentionOptions{}).features.value());
  };
  EXPECT_LT((run(c) - run(c.array() + 4.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, DisabledIsNormalizedResidual) {
  Rng rng(6);
  ParamStore store;
  add_attention(store, "a", 4, 4, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  const SuperpointState s{t.constant(rand_mat(rng, 5, 3)), t.constant(rand_mat(rng, 5, 4)), 0};
  AttentionOptions opt;
  opt.mode = AttentionMode::kDisabled;
  const Matrix out = superpoint_attention(p, "a", s, knn_superpoints(s.centroids.value(), 2), opt).features.value();
  const Matrix expect = nn::norm(p, "a.norm", s.features, 1e-5).value();
  EXPECT_EQ(out, expect);
}

TEST(Attention, TableMismatchThrows) {
  Rng rng(7);
  ParamStore store;
  add_attention(store, "a", 4, 4, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  const SuperpointState s{t.constant(rand_mat(rng, 5, 3)), t.constant(rand_mat(rng, 5, 4)), 0};
  const NeighbourTable nb = knn_superpoints(Matrix::Zero(4, 3), 2);
  EXPECT_THROW(superpoint_attention(p, "a", s, nb, AttentionOptions{}), ValidationError);
}

TEST(Fusion, SingleElementIdentityKernel) {
  Rng rng(8);
  ParamStore store;
  add_fusion(store, "f", 3, 2, 5, 3, rng);
  Matrix w = Matrix::Zero(27 * 5, 5);
  w.middleRows(13 * 5, 5) = Matrix::Identity(5, 5);
  store.set("f.conv.weight", w);
  store.set("f.conv.bias", Matrix::Zero(1, 5));
  ad::Tape t;
  ParamBinder p(t, store);
  MergedSet m;
  m.positions = t.constant(Matrix::Zero(1, 3));
  m.features = t.constant((Matrix(1, 3) << 1, -2, 0.5).finished());
  m.labels = {0};
  const SuperpointState s{t.constant(Matrix::Zero(1, 3)), t.constant((Matrix(1, 2) << 3, 0).finished()), 0};
  const Matrix out = superpoint_voxel_fusion(p, "f", s, m, FusionOptions{}).value();
  Eigen::RowVectorXd g(5);
  g << 1, -2, 0.5, 3, 0;
  const double mu = g.mean();
  const double sd = std::sqrt((g.array() - mu).square().mean() + 1e-5);
  const Eigen::RowVectorXd n = (g.array() - mu) / sd;
  const Eigen::RowVectorXd expect = n.unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
  EXPECT_LT((out.row(0) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fusion, CoincidentElementsShareFeatures) {
  Rng rng(9);
  ParamStore store;
  add_fusion(store, "f", 3, 2, 4, 3, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  MergedSet m;
  m.positions = t.constant((Matrix(3, 3) << 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.3, 0.1, 0.1).finished());
  m.features = t.constant(rand_mat(rng, 3, 3));
  m.labels = {0, 1, 1};
  const SuperpointState s{t.constant(Matrix::Zero(2, 3)), t.constant(rand_mat(rng, 2, 2)), 0};
  const Matrix out = superpoint_voxel_fusion(p, "f", s, m, FusionOptions{}).value();
  ASSERT_EQ(out.rows(), 3);
  EXPECT_EQ(out.row(0), out.row(1));
  EXPECT_NE(out.row(0), out.row(2));
}

TEST(Stack, HeadWidths) {
  PipelineConfig c;
  EXPECT_EQ(c.head_input_width(), 390);
  EXPECT_EQ(c.hidden_width(), 70);
  c.iterations = 1;
  c.width_schedule = {64};
  EXPECT_EQ(c.head_input_width(), 134);
}

TEST(Stack, RunShapesFixedCentroidsAndLiveParams) {
  Rng rng(10);
  PipelineConfig c;
  c.channels = 8;
  c.width_schedule = {8, 12, 12};
  c.neighbours = 3;
  c.output_voxel_size = 0.2;
  ParamStore store;
  add_grouping_stack(store, c, rng);
  ad::Tape t;
  ParamBinder p(t, store);
  const MergedSet m = random_merged(t, rng, 60, 8, 7);
  const SceneFrame frame{Vec3::Zero(), Vec3::Ones(), Vec3::Zero()};
  const GroupingOutput g = run_grouping_stack(p, m, 7, frame, c);
  EXPECT_EQ(g.head_input.cols(), 14 + 8 + 12 + 12);
  ASSERT_EQ(g.iteration_outputs.size(), 3u);
  EXPECT_EQ(g.iteration_outputs[0].cols(), 8);
  EXPECT_EQ(g.iteration_outputs[1].cols(), 12);
  for (const Matrix& cen : g.iteration_centroids) EXPECT_EQ(cen, g.initial.centroids.value());
  Rng proj(1);
  const Matrix r = rand_mat(proj, g.head_input.rows(), g.head_input.cols());
  t.backward(ad::sum(ad::mul(g.head_input, t.constant(r))));
  for (const auto& [name, grad] : p.gradients()) EXPECT_GT(grad.cwiseAbs().maxCoeff(), 0.0) << name;
  EXPECT_FALSE(store.contains("group2.fusion.conv.weight"));
}

TEST(Stack, ShortScheduleThrows) {
  PipelineConfig c;
  c.width_schedule = {64, 128};
  ParamStore store;
  Rng rng(1);
  EXPECT_THROW(add_grouping_stack(store, c, rng), ValidationError);
}
