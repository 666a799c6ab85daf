#include "spg/superpoint.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>
#include <unordered_map>

#include "spg/error.hpp"

namespace spg {

namespace {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1), internal_(n, 0.0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // Joins two roots; the union's internal difference becomes `weight`,
  // which is the largest MST edge since edges arrive in sorted order.
  void join(std::size_t a, std::size_t b, double weight) {
    if (size_[a] < size_[b] || (size_[a] == size_[b] && b < a)) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    internal_[a] = weight;
  }

  std::size_t size(std::size_t root) const { return size_[root]; }
  double internal(std::size_t root) const { return internal_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::vector<double> internal_;
};

struct Edge {
  double weight;
  std::int64_t a;
  std::int64_t b;
};

}  // namespace

std::vector<std::vector<std::int64_t>> point_knn(const Matrix& positions, int k) {
  const Index n = positions.rows();
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(n));
  const auto kk = static_cast<std::size_t>(std::min<Index>(k, std::max<Index>(n - 1, 0)));
  std::vector<std::pair<double, std::int64_t>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    cand.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((positions.row(i) - positions.row(j)).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
    auto& row = out[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < kk; ++j) row.push_back(cand[j].second);
  }
  return out;
}

Index dense_relabel(std::vector<std::int64_t>& labels) {
  std::unordered_map<std::int64_t, std::int64_t> remap;
  for (std::int64_t& l : labels) {
    auto [it, inserted] = remap.try_emplace(l, static_cast<std::int64_t>(remap.size()));
    l = it->second;
  }
  return static_cast<Index>(remap.size());
}

SuperpointPartition segment_points(const PointCloud& cloud, const SegmentOptions& options) {
  if (cloud.size() < 1) throw ValidationError("segment_points: cloud has no points");
  if (options.graph_k < 1) throw ValidationError("segment_points: graph_k must be >= 1");
  if (!(options.merge_threshold > 0.0)) throw ValidationError("segment_points: merge_threshold must be > 0");

  const auto knn = point_knn(cloud.positions, options.graph_k);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < knn.size(); ++i) {
    for (std::int64_t j : knn[i]) {
      const auto a = std::min<std::int64_t>(static_cast<std::int64_t>(i), j);
      const auto b = std::max<std::int64_t>(static_cast<std::int64_t>(i), j);
      const double w = (cloud.colors.row(a) - cloud.colors.row(b)).norm() +
                       options.position_weight * (cloud.positions.row(a) - cloud.positions.row(b)).norm();
      edges.push_back({w, a, b});
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.weight, x.a, x.b) < std::tie(y.weight, y.a, y.b);
  });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& x, const Edge& y) { return x.a == y.a && x.b == y.b; }),
              edges.end());

  DisjointSets sets(static_cast<std::size_t>(cloud.size()));
  const double tau = options.merge_threshold;
  for (const Edge& e : edges) {
    const std::size_t ra = sets.find(static_cast<std::size_t>(e.a));
    const std::size_t rb = sets.find(static_cast<std::size_t>(e.b));
    if (ra == rb) continue;
    const double limit_a = sets.internal(ra) + tau / static_cast<double>(sets.size(ra));
    const double limit_b = sets.internal(rb) + tau / static_cast<double>(sets.size(rb));
    if (e.weight <= std::min(limit_a, limit_b)) sets.join(ra, rb, e.weight);
  }

  SuperpointPartition part;
  part.point_labels.resize(static_cast<std::size_t>(cloud.size()));
  for (Index i = 0; i < cloud.size(); ++i)
    part.point_labels[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(sets.find(static_cast<std::size_t>(i)));
  part.count = dense_relabel(part.point_labels);
  return part;
}

SuperpointPartition load_partition(const Scene& scene) {
  if (!scene.superpoint_labels) throw ValidationError("load_partition: scene has no superpoint_labels");
  const auto& raw = *scene.superpoint_labels;
  if (static_cast<Index>(raw.size()) != scene.cloud.size())
    throw ValidationError("load_partition: " + std::to_string(raw.size()) + " labels for " +
                          std::to_string(scene.cloud.size()) + " points");
  SuperpointPartition part;
  part.point_labels.assign(raw.begin(), raw.end());
  part.count = dense_relabel(part.point_labels);
  return part;
}

std::vector<std::int64_t> transfer_to_voxels(std::span<const std::int64_t> point_labels,
                                             std::span<const std::int64_t> point_to_voxel, Index voxel_count) {
  if (point_labels.size() != point_to_voxel.size())
    throw ValidationError("transfer_to_voxels: label and voxel maps differ in length");
  // (voxel, label) pairs sorted, then run-length counted.
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs(point_labels.size());
  for (std::size_t i = 0; i < point_labels.size(); ++i) {
    if (point_to_voxel[i] < 0 || point_to_voxel[i] >= voxel_count)
      throw ValidationError("transfer_to_voxels: voxel index out of range at point " + std::to_string(i));
    pairs[i] = {point_to_voxel[i], point_labels[i]};
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::int64_t> out(static_cast<std::size_t>(voxel_count), -1);
  std::vector<std::size_t> best(static_cast<std::size_t>(voxel_count), 0);
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j] == pairs[i]) ++j;
    const auto v = static_cast<std::size_t>(pairs[i].first);
    // Labels arrive ascending within a voxel, so strict > keeps the smallest on ties.
    if (j - i > best[v]) {
      best[v] = j - i;
      out[v] = pairs[i].second;
    }
    i = j;
  }
  for (std::size_t v = 0; v < out.size(); ++v)
    if (out[v] < 0) throw ValidationError("transfer_to_voxels: voxel " + std::to_string(v) + " has no points");
  return out;
}

void attach_voxels(SuperpointPartition& part, std::span<const std::int64_t> point_to_voxel, Index voxel_count) {
  part.voxel_labels = transfer_to_voxels(part.point_labels, point_to_voxel, voxel_count);
  std::vector<std::int64_t> remap(static_cast<std::size_t>(part.count), -1);
  std::int64_t next = 0;
  for (std::int64_t& l : part.voxel_labels) {
    auto& slot = remap[static_cast<std::size_t>(l)];
    if (slot < 0) slot = next++;
    l = slot;
  }
  for (std::size_t i = 0; i < part.point_labels.size(); ++i) {
    const std::int64_t mapped = remap[static_cast<std::size_t>(part.point_labels[i])];
    part.point_labels[i] = mapped >= 0 ? mapped : part.voxel_labels[static_cast<std::size_t>(point_to_voxel[i])];
  }
  part.count = next;
}

NeighbourTable knn_superpoints(const Matrix& centroids, int k) {
  const Index n = centroids.rows();
  if (n < 1) throw ValidationError("knn_superpoints: no centroids");
  if (k < 1) throw ValidationError("knn_superpoints: k must be >= 1");
  NeighbourTable table;
  table.rows = n;
  table.k = k;
  table.indices.reserve(static_cast<std::size_t>(n * k));
  std::vector<std::pair<double, std::int64_t>> cand;
  for (Index i = 0; i < n; ++i) {
    cand.clear();
    for (Index j = 0; j < n; ++j)
      if (j != i) cand.emplace_back((centroids.row(i) - centroids.row(j)).squaredNorm(), j);
    const auto take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(k));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    for (std::size_t j = 0; j < take; ++j) table.indices.push_back(cand[j].second);
    const std::int64_t pad = take > 0 ? cand[0].second : i;
    for (std::size_t j = take; j < static_cast<std::size_t>(k); ++j) table.indices.push_back(pad);
  }
  return table;
}

}  // namespace spg
