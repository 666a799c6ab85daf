#include <gtest/gtest.h>

#include <map>

#include "spg/error.hpp"
#include "spg/params.hpp"
#include "spg/voxel_grid.hpp"
#include "oracles.hpp"

using namespace spg;

namespace {

Matrix rand_mat(Rng& rng, Index r, Index c, double lo = -1, double hi = 1) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

PointCloud cloud_of(const Matrix& pos, const Matrix& col) { return PointCloud{pos, col}; }

}  // namespace

TEST(Voxelize, SinglePointAtOrigin) {
  const auto v = voxelize(cloud_of(Matrix::Zero(1, 3), (Matrix(1, 3) << 0.2, 0.4, 0.6).finished()), 0.02);
  ASSERT_EQ(v.size(), 1);
  EXPECT_EQ(v.coords[0], (Coord{0, 0, 0}));
  EXPECT_EQ(v.features, (Matrix(1, 3) << 0.2, 0.4, 0.6).finished());
}

TEST(Voxelize, FloorDivision) {
  EXPECT_EQ(quantize_point(Vec3(0.05, 0.03, -0.01), 0.02), (Coord{2, 1, -1}));
}

TEST(Voxelize, MeanColor) {
  const Matrix pos = (Matrix(2, 3) << 0.001, 0.001, 0.001, 0.015, 0.002, 0.019).finished();
  const Matrix col = (Matrix(2, 3) << 0.2, 0.4, 1.0, 0.6, 0.0, 0.5).finished();
  const auto v = voxelize(cloud_of(pos, col), 0.02);
  ASSERT_EQ(v.size(), 1);
  EXPECT_NEAR((v.features - (col.row(0) + col.row(1)) / 2).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_EQ(v.point_to_voxel, (std::vector<std::int64_t>{0, 0}));
}

TEST(Voxelize, CanonicalOrder) {
  Rng rng(2);
  const auto v = voxelize(cloud_of(rand_mat(rng, 200, 3), rand_mat(rng, 200, 3, 0, 1)), 0.3);
  for (std::size_t i = 1; i < v.coords.size(); ++i) EXPECT_TRUE(canonical_less(v.coords[i - 1], v.coords[i]));
}

TEST(VoxelCenter, Values) {
  EXPECT_TRUE(voxel_center({0, 0, 0}, 0.02).isApprox(Vec3(0.01, 0.01, 0.01)));
  EXPECT_TRUE(voxel_center({-1, 0, 0}, 0.02).isApprox(Vec3(-0.01, 0.01, 0.01)));
  EXPECT_NEAR((voxel_center({2, 1, -1}, 0.02) - Vec3(0.05, 0.03, -0.01)).norm(), 0.0, 1e-15);
}

TEST(ScatterMean, Basics) {
  const std::vector<std::int64_t> same{0, 0};
  EXPECT_EQ(scatter_mean((Matrix(2, 1) << 1, 3).finished(), same, 1), (Matrix(1, 1) << 2).finished());
  const Matrix f = (Matrix(2, 2) << 1, 2, 3, 4).finished();
  const std::vector<std::int64_t> ident{0, 1};
  EXPECT_EQ(scatter_mean(f, ident, 2), f);
}

TEST(ScatterMean, MatchesBruteForce) {
  Rng rng(7);
  const Matrix f = rand_mat(rng, 7, 3);
  std::vector<std::int64_t> labels(7);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng.below(2));
  labels[0] = 0;
  labels[1] = 1;
  const Matrix got = scatter_mean(f, labels, 2);
  for (int g = 0; g < 2; ++g) {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(3);
    int n = 0;
    for (int e = 0; e < 7; ++e)
      if (labels[static_cast<std::size_t>(e)] == g) {
        s += f.row(e);
        ++n;
      }
    EXPECT_NEAR((got.row(g) - s / n).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(ScatterMean, EmptyGroupsReported) {
  std::vector<Index> empty;
  const std::vector<std::int64_t> labels{0, 2};
  const Matrix out = scatter_mean(Matrix::Ones(2, 2), labels, 3, &empty);
  EXPECT_EQ(empty, (std::vector<Index>{1}));
  EXPECT_EQ(out.row(1), Matrix::Zero(1, 2));
  const std::vector<std::int64_t> bad{0, 5};
  EXPECT_THROW(scatter_mean(Matrix::Ones(2, 2), bad, 3), ValidationError);
}

TEST(Broadcast, RowsAndInverse) {
  ad::Tape t;
  const std::vector<std::int64_t> three{0, 0, 0};
  const Matrix g = (Matrix(1, 2) << 1, -2).finished();
  const Matrix b = broadcast(t.constant(g), three).value();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(b.row(i), g.row(0));
  const std::vector<std::int64_t> ident{0, 1, 2};
  Rng rng(1);
  const Matrix f = rand_mat(rng, 3, 2);
  EXPECT_EQ(broadcast(scatter_mean(t.constant(f), ident, 3), ident).value(), f);
  EXPECT_THROW(broadcast(t.constant(g), ident), ValidationError);
}

TEST(Revoxelize, SingleAndCoincident) {
  const auto one = revoxelize((Matrix(1, 3) << 0.1, 0.2, 0.3).finished(), (Matrix(1, 2) << 5, 6).finished(), 0.04);
  ASSERT_EQ(one.size(), 1);
  EXPECT_EQ(one.features, (Matrix(1, 2) << 5, 6).finished());
  const auto two = revoxelize((Matrix(2, 3) << 0.1, 0.2, 0.3, 0.1, 0.2, 0.3).finished(),
                              (Matrix(2, 1) << 1, 2).finished(), 0.04);
  ASSERT_EQ(two.size(), 1);
  EXPECT_EQ(two.features(0, 0), 1.5);
}

TEST(Revoxelize, MatchesBucketOracle) {
  Rng rng(21);
  const Matrix pos = rand_mat(rng, 20, 3, 0, 0.12);
  const Matrix feat = rand_mat(rng, 20, 2);
  const auto v = revoxelize(pos, feat, 0.04);
  std::map<Coord, std::pair<Eigen::RowVectorXd, int>> buckets;
  for (int e = 0; e < 20; ++e) {
    Coord c;
    for (int a = 0; a < 3; ++a) c[static_cast<std::size_t>(a)] = static_cast<int>(std::floor(pos(e, a) / 0.04));
    auto& b = buckets[c];
    if (b.second == 0) b.first = Eigen::RowVectorXd::Zero(2);
    b.first += feat.row(e);
    b.second++;
  }
  ASSERT_EQ(v.size(), static_cast<Index>(buckets.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const auto& b = buckets.at(v.coords[static_cast<std::size_t>(i)]);
    EXPECT_NEAR((v.features.row(i) - b.first / b.second).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
  for (int e = 0; e < 20; ++e) {
    const Coord& c = v.coords[static_cast<std::size_t>(v.point_to_voxel[static_cast<std::size_t>(e)])];
    for (int a = 0; a < 3; ++a) EXPECT_EQ(c[static_cast<std::size_t>(a)], static_cast<int>(std::floor(pos(e, a) / 0.04)));
  }
}

TEST(SparseConv, IdentityKernel) {
  Rng rng(3);
  SparseVoxelSet v;
  v.coords = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}};
  v.features = rand_mat(rng, 3, 4);
  v.voxel_size = 0.04;
  const auto out = sparse_conv3(v, ConvKernel3::identity(4));
  EXPECT_EQ(out.features, v.features);
  EXPECT_EQ(out.coords, v.coords);
}

TEST(SparseConv, IsolatedSite) {
  Rng rng(4);
  SparseVoxelSet v;
  v.coords = {{5, 5, 5}};
  v.features = rand_mat(rng, 1, 3);
  ConvKernel3 k;
  k.in_channels = 3;
  k.out_channels = 2;
  k.weights = rand_mat(rng, 27 * 3, 2);
  k.bias = rand_mat(rng, 1, 2);
  const auto out = sparse_conv3(v, k);
  const Matrix expect = k.bias + v.features * k.weights.middleRows(13 * 3, 3);
  EXPECT_NEAR((out.features - expect).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(SparseConv, CenterOffsetIsThirteen) {
  EXPECT_EQ(kernel_offset(13), (std::array<int, 3>{0, 0, 0}));
  EXPECT_EQ(kernel_offset(0), (std::array<int, 3>{-1, -1, -1}));
  EXPECT_EQ(kernel_offset(1), (std::array<int, 3>{-1, -1, 0}));
}

TEST(SparseConv, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const auto [v, k] = oracle::random_conv_case(rng, 4, 3, 2);
    EXPECT_LT((sparse_conv3(v, k).features - oracle::dense_conv(v, k, 4)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(SparseConv, KernelOneIsPointwise) {
  Rng rng(8);
  SparseVoxelSet v;
  v.coords = {{0, 0, 0}, {1, 0, 0}};
  v.features = rand_mat(rng, 2, 3);
  ConvKernel3 k;
  k.kernel_size = 1;
  k.in_channels = 3;
  k.out_channels = 2;
  k.weights = rand_mat(rng, 3, 2);
  k.bias = Matrix::Zero(1, 2);
  EXPECT_NEAR((sparse_conv3(v, k).features - v.features * k.weights).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(SparseConv, ChannelMismatchThrows) {
  SparseVoxelSet v;
  v.coords = {{0, 0, 0}};
  v.features = Matrix::Zero(1, 3);
  EXPECT_THROW(sparse_conv3(v, ConvKernel3::identity(4)), ValidationError);
}
