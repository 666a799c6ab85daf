#include "spg/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "spg/error.hpp"

namespace spg {

namespace {

constexpr std::int64_t kAxisBias = 1 << 20;

std::uint64_t pack(const Coord& c) {
  auto axis = [](std::int32_t v) -> std::uint64_t {
    const std::int64_t shifted = static_cast<std::int64_t>(v) + kAxisBias;
    if (shifted < 0 || shifted >= (std::int64_t{1} << 21))
      throw ValidationError("voxel coordinate " + std::to_string(v) + " outside the 21-bit hash range");
    return static_cast<std::uint64_t>(shifted);
  };
  return (axis(c[2]) << 42) | (axis(c[1]) << 21) | axis(c[0]);
}

using CoordIndex = std::unordered_map<std::uint64_t, std::int64_t>;

CoordIndex index_coords(const std::vector<Coord>& coords) {
  CoordIndex idx;
  idx.reserve(coords.size() * 2);
  for (std::size_t i = 0; i < coords.size(); ++i) idx.emplace(pack(coords[i]), static_cast<std::int64_t>(i));
  return idx;
}

void check_labels(std::span<const std::int64_t> labels, Index groups, const char* op) {
  for (std::size_t e = 0; e < labels.size(); ++e) {
    if (labels[e] < 0 || labels[e] >= groups)
      throw ValidationError(std::string(op) + ": label " + std::to_string(labels[e]) + " at element " +
                            std::to_string(e) + " outside [0," + std::to_string(groups) + ")");
  }
}

std::vector<double> group_counts(std::span<const std::int64_t> labels, Index groups,
                                 std::vector<Index>* empty_groups) {
  std::vector<double> counts(static_cast<std::size_t>(groups), 0.0);
  for (std::int64_t l : labels) counts[static_cast<std::size_t>(l)] += 1.0;
  if (empty_groups) {
    empty_groups->clear();
    for (Index g = 0; g < groups; ++g)
      if (counts[static_cast<std::size_t>(g)] == 0.0) empty_groups->push_back(g);
  }
  return counts;
}

}  // namespace

bool canonical_less(const Coord& a, const Coord& b) {
  if (a[2] != b[2]) return a[2] < b[2];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[0] < b[0];
}

Matrix SparseVoxelSet::centers() const {
  Matrix out(size(), 3);
  for (Index i = 0; i < size(); ++i) out.row(i) = voxel_center(coords[static_cast<std::size_t>(i)], voxel_size).transpose();
  return out;
}

Coord quantize_point(const Vec3& p, double voxel_size) {
  Coord c;
  for (int a = 0; a < 3; ++a) c[a] = static_cast<std::int32_t>(std::floor(p[a] / voxel_size));
  return c;
}

Vec3 voxel_center(const Coord& c, double voxel_size) {
  return Vec3((c[0] + 0.5) * voxel_size, (c[1] + 0.5) * voxel_size, (c[2] + 0.5) * voxel_size);
}

Quantization quantize(const Matrix& positions, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ValidationError("quantize: voxel_size must be > 0");
  if (positions.rows() == 0) throw ValidationError("quantize: no input elements");
  if (positions.cols() != 3) throw ValidationError("quantize: positions must be E x 3");
  const auto n = static_cast<std::size_t>(positions.rows());
  std::vector<Coord> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = quantize_point(positions.row(static_cast<Index>(i)).transpose(), voxel_size);

  Quantization q;
  q.coords = raw;
  std::sort(q.coords.begin(), q.coords.end(), canonical_less);
  q.coords.erase(std::unique(q.coords.begin(), q.coords.end()), q.coords.end());
  const CoordIndex idx = index_coords(q.coords);
  q.element_to_voxel.resize(n);
  for (std::size_t i = 0; i < n; ++i) q.element_to_voxel[i] = idx.at(pack(raw[i]));
  return q;
}

SparseVoxelSet revoxelize(const Matrix& positions, const Matrix& features, double voxel_size) {
  if (features.rows() != positions.rows())
    throw ValidationError("revoxelize: positions and features disagree on element count");
  Quantization q = quantize(positions, voxel_size);
  SparseVoxelSet out;
  out.features = scatter_mean(features, q.element_to_voxel, static_cast<Index>(q.coords.size()));
  out.coords = std::move(q.coords);
  out.voxel_size = voxel_size;
  out.point_to_voxel = std::move(q.element_to_voxel);
  return out;
}

SparseVoxelSet voxelize(const PointCloud& cloud, double voxel_size) {
  if (cloud.size() == 0) throw ValidationError("voxelize: empty cloud");
  return revoxelize(cloud.positions, cloud.colors, voxel_size);
}

Matrix scatter_mean(const Matrix& features, std::span<const std::int64_t> labels, Index groups,
                    std::vector<Index>* empty_groups) {
  if (static_cast<Index>(labels.size()) != features.rows())
    throw ValidationError("scatter_mean: label count does not match feature rows");
  if (labels.empty()) throw ValidationError("scatter_mean: no elements");
  check_labels(labels, groups, "scatter_mean");
  const std::vector<double> counts = group_counts(labels, groups, empty_groups);
  Matrix out = Matrix::Zero(groups, features.cols());
  for (std::size_t e = 0; e < labels.size(); ++e) out.row(labels[e]) += features.row(static_cast<Index>(e));
  for (Index g = 0; g < groups; ++g) {
    const double c = counts[static_cast<std::size_t>(g)];
    if (c > 0.0) out.row(g) /= c;
  }
  return out;
}

ad::Var scatter_mean(ad::Var features, std::span<const std::int64_t> labels, Index groups,
                     std::vector<Index>* empty_groups) {
  Matrix out = scatter_mean(features.value(), labels, groups, empty_groups);
  const std::vector<double> counts = group_counts(labels, groups, nullptr);
  ad::Tape& t = *features.tape;
  std::vector<std::int64_t> lab(labels.begin(), labels.end());
  return t.record(std::move(out), t.requires_grad(features),
                  [features, lab = std::move(lab), counts](ad::Tape& tp, const Matrix& g) {
                    Matrix gx(static_cast<Index>(lab.size()), g.cols());
                    for (std::size_t e = 0; e < lab.size(); ++e)
                      gx.row(static_cast<Index>(e)) = g.row(lab[e]) / counts[static_cast<std::size_t>(lab[e])];
                    tp.accumulate(features, gx);
                  });
}

ad::Var broadcast(ad::Var group_features, std::span<const std::int64_t> labels) {
  check_labels(labels, group_features.rows(), "broadcast");
  return ad::gather_rows(group_features, labels);
}

std::array<int, 3> kernel_offset(int k) { return {k / 9 - 1, (k / 3) % 3 - 1, k % 3 - 1}; }

ConvKernel3 ConvKernel3::identity(Index channels, int kernel_size) {
  ConvKernel3 k;
  k.kernel_size = kernel_size;
  k.in_channels = channels;
  k.out_channels = channels;
  k.weights = Matrix::Zero(k.volume() * channels, channels);
  const int center = kernel_size == 3 ? 13 : 0;
  k.weights.middleRows(center * channels, channels).setIdentity();
  k.bias = Matrix::Zero(1, channels);
  return k;
}

ConvRulebook build_rulebook(const std::vector<Coord>& coords, int kernel_size) {
  if (kernel_size != 3 && kernel_size != 1) throw ValidationError("sparse_conv3: kernel size must be 1 or 3");
  ConvRulebook rules;
  rules.kernel_size = kernel_size;
  rules.sites = static_cast<Index>(coords.size());
  if (kernel_size == 1) {
    rules.pairs.resize(1);
    for (std::size_t i = 0; i < coords.size(); ++i)
      rules.pairs[0].emplace_back(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i));
    return rules;
  }
  rules.pairs.resize(27);
  const CoordIndex idx = index_coords(coords);
  for (std::size_t out = 0; out < coords.size(); ++out) {
    for (int k = 0; k < 27; ++k) {
      const auto [dz, dy, dx] = kernel_offset(k);
      const Coord nb{coords[out][0] + dx, coords[out][1] + dy, coords[out][2] + dz};
      auto it = idx.find(pack(nb));
      if (it != idx.end()) rules.pairs[static_cast<std::size_t>(k)].emplace_back(it->second, static_cast<std::int64_t>(out));
    }
  }
  return rules;
}

ad::Var sparse_conv3(ad::Var features, ad::Var weights, ad::Var bias, const ConvRulebook& rules) {
  const Index cin = features.cols();
  const auto volume = static_cast<Index>(rules.pairs.size());
  if (features.rows() != rules.sites)
    throw ValidationError("sparse_conv3: rulebook built for " + std::to_string(rules.sites) + " sites, features have " +
                          std::to_string(features.rows()));
  if (weights.rows() != volume * cin)
    throw ValidationError("sparse_conv3: kernel expects C_in = " + std::to_string(weights.rows() / std::max<Index>(volume, 1)) +
                          ", features have " + std::to_string(cin));
  const Index cout = weights.cols();
  if (bias.rows() != 1 || bias.cols() != cout) throw ValidationError("sparse_conv3: bias must be 1 x C_out");

  const Matrix& x = features.value();
  const Matrix& w = weights.value();
  Matrix out(rules.sites, cout);
  out.rowwise() = bias.value().row(0);
  for (Index k = 0; k < volume; ++k) {
    const auto& pairs = rules.pairs[static_cast<std::size_t>(k)];
    if (pairs.empty()) continue;
    Matrix gathered(static_cast<Index>(pairs.size()), cin);
    for (std::size_t p = 0; p < pairs.size(); ++p) gathered.row(static_cast<Index>(p)) = x.row(pairs[p].first);
    const Matrix contrib = gathered * w.middleRows(k * cin, cin);
    for (std::size_t p = 0; p < pairs.size(); ++p) out.row(pairs[p].second) += contrib.row(static_cast<Index>(p));
  }

  ad::Tape& t = *features.tape;
  const bool rg = t.requires_grad(features) || t.requires_grad(weights) || t.requires_grad(bias);
  return t.record(std::move(out), rg, [features, weights, bias, rules, cin, volume](ad::Tape& tp, const Matrix& g) {
    const Matrix& xv = features.value();
    const Matrix& wv = weights.value();
    const bool need_x = tp.requires_grad(features);
    const bool need_w = tp.requires_grad(weights);
    Matrix gx;
    if (need_x) gx = Matrix::Zero(xv.rows(), cin);
    Matrix gw;
    if (need_w) gw = Matrix::Zero(wv.rows(), wv.cols());
    for (Index k = 0; k < volume; ++k) {
      const auto& pairs = rules.pairs[static_cast<std::size_t>(k)];
      if (pairs.empty()) continue;
      Matrix gout(static_cast<Index>(pairs.size()), g.cols());
      for (std::size_t p = 0; p < pairs.size(); ++p) gout.row(static_cast<Index>(p)) = g.row(pairs[p].second);
      if (need_w) {
        Matrix gathered(static_cast<Index>(pairs.size()), cin);
        for (std::size_t p = 0; p < pairs.size(); ++p) gathered.row(static_cast<Index>(p)) = xv.row(pairs[p].first);
        gw.middleRows(k * cin, cin).noalias() += gathered.transpose() * gout;
      }
      if (need_x) {
        const Matrix back = gout * wv.middleRows(k * cin, cin).transpose();
        for (std::size_t p = 0; p < pairs.size(); ++p) gx.row(pairs[p].first) += back.row(static_cast<Index>(p));
      }
    }
    if (need_x) tp.accumulate(features, gx);
    if (need_w) tp.accumulate(weights, gw);
    if (tp.requires_grad(bias)) tp.accumulate(bias, g.colwise().sum());
  });
}

SparseVoxelSet sparse_conv3(const SparseVoxelSet& voxels, const ConvKernel3& kernel) {
  if (kernel.in_channels != voxels.channels())
    throw ValidationError("sparse_conv3: kernel C_in " + std::to_string(kernel.in_channels) + " != voxel channels " +
                          std::to_string(voxels.channels()));
  if (kernel.weights.rows() != kernel.volume() * kernel.in_channels || kernel.weights.cols() != kernel.out_channels)
    throw ValidationError("sparse_conv3: kernel weight shape inconsistent with its channel counts");
  const ConvRulebook rules = build_rulebook(voxels.coords, kernel.kernel_size);
  ad::Tape tape;
  const ad::Var out = sparse_conv3(tape.constant(voxels.features), tape.constant(kernel.weights),
                                   tape.constant(kernel.bias), rules);
  SparseVoxelSet result;
  result.coords = voxels.coords;
  result.features = out.value();
  result.voxel_size = voxels.voxel_size;
  result.point_to_voxel = voxels.point_to_voxel;
  return result;
}

}  // namespace spg
