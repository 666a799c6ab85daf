#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/scene.hpp"

namespace spg {

// Integer grid index (x, y, z).
using Coord = std::array<std::int32_t, 3>;

// Lexicographic (z, y, x) order: the canonical voxel row order.
bool canonical_less(const Coord& a, const Coord& b);

// Unique voxel coordinates with one feature row each, rows in canonical order.
struct SparseVoxelSet {
  std::vector<Coord> coords;
  Matrix features;
  double voxel_size = 0.0;
  // Input element -> voxel row. Empty when not produced by quantization.
  std::vector<std::int64_t> point_to_voxel;

  Index size() const { return static_cast<Index>(coords.size()); }
  Index channels() const { return features.cols(); }
  // M x 3 voxel centers in meters.
  Matrix centers() const;
};

Coord quantize_point(const Vec3& p, double voxel_size);
Vec3 voxel_center(const Coord& c, double voxel_size);

// Buckets continuous positions (E x 3) into canonical unique voxels.
struct Quantization {
  std::vector<Coord> coords;
  std::vector<std::int64_t> element_to_voxel;
};
Quantization quantize(const Matrix& positions, double voxel_size);

// Voxel feature = mean member color.
SparseVoxelSet voxelize(const PointCloud& cloud, double voxel_size);

// Same quantization and mean rule for arbitrary positions and features.
SparseVoxelSet revoxelize(const Matrix& positions, const Matrix& features, double voxel_size);

// Group means. Empty groups give zero rows; their ids go to `empty_groups`.
Matrix scatter_mean(const Matrix& features, std::span<const std::int64_t> labels, Index groups,
                    std::vector<Index>* empty_groups = nullptr);
ad::Var scatter_mean(ad::Var features, std::span<const std::int64_t> labels, Index groups,
                     std::vector<Index>* empty_groups = nullptr);

// row e = group_features[labels[e]]; backward scatter-sums.
ad::Var broadcast(ad::Var group_features, std::span<const std::int64_t> labels);

// Offsets (dz, dy, dx) in {-1,0,1}^3, lexicographic; index 13 is the center.
// A kernel of size 1 uses only the center offset.
struct ConvKernel3 {
  int kernel_size = 3;
  Index in_channels = 0;
  Index out_channels = 0;
  // (volume * in_channels) x out_channels; block k holds offset k.
  Matrix weights;
  Matrix bias;  // 1 x out_channels

  int volume() const { return kernel_size == 3 ? 27 : 1; }
  static ConvKernel3 identity(Index channels, int kernel_size = 3);
};

std::array<int, 3> kernel_offset(int k);  // (dz, dy, dx)

// Active (input row, output row) pairs per kernel offset, in output-row order.
struct ConvRulebook {
  int kernel_size = 3;
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> pairs;
  Index sites = 0;
};
ConvRulebook build_rulebook(const std::vector<Coord>& coords, int kernel_size = 3);

// Submanifold convolution: the output active set equals the input active set.
ad::Var sparse_conv3(ad::Var features, ad::Var weights, ad::Var bias, const ConvRulebook& rules);
SparseVoxelSet sparse_conv3(const SparseVoxelSet& voxels, const ConvKernel3& kernel);

}  // namespace spg
