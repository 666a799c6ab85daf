#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "spg/autodiff.hpp"
#include "spg/scene.hpp"

namespace spg {

struct SuperpointPartition {
  std::vector<std::int64_t> point_labels;
  std::vector<std::int64_t> voxel_labels;
  Index count = 0;
};

struct SegmentOptions {
  int graph_k = 10;
  // Felzenszwalb scale parameter: components merge while w <= Int(C) + threshold / |C|.
  double merge_threshold = 0.5;
  // Meters-to-color weighting of the position term in edge weights.
  double position_weight = 1.0;
};

// Graph over-segmentation of the point k-NN graph. Edge weight is
// |color_i - color_j| + position_weight * |p_i - p_j|. Fills point_labels
// (dense, numbered by first occurrence) and count.
SuperpointPartition segment_points(const PointCloud& cloud, const SegmentOptions& options);

// Dense relabeling of the scene's precomputed labels in first-occurrence order.
SuperpointPartition load_partition(const Scene& scene);

// Majority point label per voxel, ties to the smallest label.
std::vector<std::int64_t> transfer_to_voxels(std::span<const std::int64_t> point_labels,
                                             std::span<const std::int64_t> point_to_voxel, Index voxel_count);

// Fills voxel_labels, then compacts labels so every superpoint owns at least
// one voxel. Points of a superpoint that lost all voxels take their voxel's label.
void attach_voxels(SuperpointPartition& part, std::span<const std::int64_t> point_to_voxel, Index voxel_count);

// Relabel to dense [0, L) in first-occurrence order; returns L.
Index dense_relabel(std::vector<std::int64_t>& labels);

// k nearest other rows by Euclidean distance (ties to the smaller index).
// Rows short of k neighbours repeat their nearest one, or themselves when alone.
struct NeighbourTable {
  std::vector<std::int64_t> indices;  // L * k, row-major
  Index rows = 0;
  int k = 0;

  std::int64_t at(Index row, int j) const { return indices[static_cast<std::size_t>(row * k + j)]; }
};
NeighbourTable knn_superpoints(const Matrix& centroids, int k);

// Brute-force k-NN over points (ties to the smaller index), excluding self.
std::vector<std::vector<std::int64_t>> point_knn(const Matrix& positions, int k);

}  // namespace spg
