#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "spg/error.hpp"
#include "spg/params.hpp"
#include "spg/superpoint.hpp"
#include "spg/synth.hpp"
#include "spg/voxel_grid.hpp"
#include "oracles.hpp"

using namespace spg;

namespace {

Matrix rand_mat(Rng& rng, Index r, Index c, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

}  // namespace

TEST(Knn, CollinearExample) {
  const Matrix c = (Matrix(3, 3) << 0, 0, 0, 1, 0, 0, 3, 0, 0).finished();
  EXPECT_EQ(knn_superpoints(c, 1).indices, (std::vector<std::int64_t>{1, 0, 1}));
}

TEST(Knn, SingleRowIsSelf) {
  EXPECT_EQ(knn_superpoints(Matrix::Zero(1, 3), 8).indices, std::vector<std::int64_t>(8, 0));
}

TEST(Knn, TieToSmallerIndex) {
  const Matrix c = (Matrix(3, 3) << 0, 0, 0, 1, 0, 0, -1, 0, 0).finished();
  EXPECT_EQ(knn_superpoints(c, 1).at(0, 0), 1);
}

TEST(Knn, ShortRowsRepeatNearest) {
  const Matrix c = (Matrix(3, 3) << 0, 0, 0, 1, 0, 0, 3, 0, 0).finished();
  const auto t = knn_superpoints(c, 4);
  EXPECT_EQ(t.indices, (std::vector<std::int64_t>{1, 2, 1, 1, 0, 2, 0, 0, 1, 0, 1, 1}));
}

TEST(Knn, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s);
    const Index l = 1 + static_cast<Index>(rng.below(200));
    const int k = 1 + static_cast<int>(rng.below(10));
    const Matrix c = rand_mat(rng, l, 3);
    const auto t = knn_superpoints(c, k);
    ASSERT_EQ(t.rows, l);
    for (Index i = 0; i < l; ++i) {
      const auto expect = oracle::knn_row(c, i, k);
      for (int j = 0; j < k; ++j) EXPECT_EQ(t.at(i, j), expect[static_cast<std::size_t>(j)]) << "L=" << l << " row " << i;
    }
  }
}

TEST(Segment, SinglePoint) {
  const auto p = segment_points(PointCloud{Matrix::Zero(1, 3), Matrix::Zero(1, 3)}, SegmentOptions{});
  EXPECT_EQ(p.count, 1);
  EXPECT_EQ(p.point_labels, (std::vector<std::int64_t>{0}));
}

TEST(Segment, InfiniteThresholdMergesAll) {
  Rng rng(3);
  SegmentOptions o;
  o.merge_threshold = std::numeric_limits<double>::infinity();
  o.graph_k = 20;
  const auto p = segment_points(PointCloud{rand_mat(rng, 30, 3), rand_mat(rng, 30, 3, 0, 1)}, o);
  EXPECT_EQ(p.count, 1);
}

TEST(Segment, TwoSeparatedClusters) {
  Rng rng(5);
  const Index n = 40;
  Matrix pos(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double off = i < n / 2 ? 0.0 : 10.0;
    pos.row(i) << off + rng.uniform(0, 0.1), rng.uniform(0, 0.1), rng.uniform(0, 0.1);
  }
  const Matrix col = Matrix::Constant(n, 3, 0.5);
  SegmentOptions o;
  o.graph_k = 5;
  o.merge_threshold = 5.0;  // far above intra-cluster weights, below the 10 m gap
  const auto p = segment_points(PointCloud{pos, col}, o);
  ASSERT_EQ(p.count, 2);
  for (Index i = 0; i < n; ++i) EXPECT_EQ(p.point_labels[static_cast<std::size_t>(i)], i < n / 2 ? 0 : 1);
}

TEST(Segment, DeterministicAndDense) {
  SynthSpec spec;
  spec.seed = 8;
  const Scene s = synthesize(spec);
  const auto a = segment_points(s.cloud, SegmentOptions{});
  const auto b = segment_points(s.cloud, SegmentOptions{});
  EXPECT_EQ(a.point_labels, b.point_labels);
  std::vector<bool> seen(static_cast<std::size_t>(a.count), false);
  for (auto l : a.point_labels) {
    ASSERT_GE(l, 0);
    ASSERT_LT(l, a.count);
    seen[static_cast<std::size_t>(l)] = true;
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool v) { return v; }));
  EXPECT_GT(a.count, 1);
}

TEST(LoadPartition, DenseRelabel) {
  Scene s;
  s.cloud = PointCloud{Matrix::Zero(3, 3), Matrix::Zero(3, 3)};
  s.superpoint_labels = std::vector<std::uint32_t>{5, 5, 9};
  const auto p = load_partition(s);
  EXPECT_EQ(p.point_labels, (std::vector<std::int64_t>{0, 0, 1}));
  EXPECT_EQ(p.count, 2);
  s.superpoint_labels = std::vector<std::uint32_t>{5, 5};
  EXPECT_THROW(load_partition(s), ValidationError);
}

TEST(LoadPartition, GeneratorLabelsUpToRelabeling) {
  SynthSpec spec;
  spec.seed = 2;
  const Scene s = synthesize(spec);
  const auto p = load_partition(s);
  std::map<std::uint32_t, std::int64_t> fwd;
  std::map<std::int64_t, std::uint32_t> back;
  for (std::size_t i = 0; i < p.point_labels.size(); ++i) {
    const auto a = (*s.superpoint_labels)[i];
    const auto b = p.point_labels[i];
    EXPECT_EQ(fwd.emplace(a, b).first->second, b);
    EXPECT_EQ(back.emplace(b, a).first->second, a);
  }
}

TEST(Transfer, MajorityAndTies) {
  const std::vector<std::int64_t> labels{1, 1, 2, 2, 1};
  const std::vector<std::int64_t> p2v{0, 0, 0, 1, 1};
  EXPECT_EQ(transfer_to_voxels(labels, p2v, 2), (std::vector<std::int64_t>{1, 1}));
}

TEST(Transfer, MatchesCountingOracle) {
  Rng rng(9);
  const std::size_t n = 300;
  const Index m = 40;
  std::vector<std::int64_t> labels(n), p2v(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::int64_t>(rng.below(5));
    p2v[i] = static_cast<std::int64_t>(i < static_cast<std::size_t>(m) ? i : rng.below(static_cast<std::uint64_t>(m)));
  }
  const auto got = transfer_to_voxels(labels, p2v, m);
  for (Index v = 0; v < m; ++v) {
    std::map<std::int64_t, int> counts;
    for (std::size_t i = 0; i < n; ++i)
      if (p2v[i] == v) counts[labels[i]]++;
    std::int64_t best = -1;
    int best_n = 0;
    for (const auto& [l, c] : counts)
      if (c > best_n) {
        best = l;
        best_n = c;
      }
    EXPECT_EQ(got[static_cast<std::size_t>(v)], best);
  }
}

TEST(AttachVoxels, EverySuperpointOwnsAVoxel) {
  SuperpointPartition p;
  // Superpoint 1 loses its only voxel to the majority of superpoint 0.
  p.point_labels = {0, 0, 1, 2};
  p.count = 3;
  const std::vector<std::int64_t> p2v{0, 0, 0, 1};
  attach_voxels(p, p2v, 2);
  EXPECT_EQ(p.count, 2);
  EXPECT_EQ(p.voxel_labels, (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(p.point_labels, (std::vector<std::int64_t>{0, 0, 0, 1}));
}
