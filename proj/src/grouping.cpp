#include "spg/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spg/error.hpp"
#include "spg/nn.hpp"
#include "spg/voxel_grid.hpp"

namespace spg {

namespace {

// Per-axis affine map x -> x * scale + offset as row vectors.
struct AxisAffine {
  Eigen::RowVector3d scale;
  Eigen::RowVector3d offset;
};

AxisAffine minmax_affine(const SceneFrame& frame) {
  AxisAffine a;
  for (int i = 0; i < 3; ++i) {
    const double extent = frame.max[i] - frame.min[i];
    if (extent > 0.0) {
      a.scale[i] = 1.0 / extent;
      a.offset[i] = -frame.min[i] / extent;
    } else {
      a.scale[i] = 0.0;
      a.offset[i] = 0.5;
    }
  }
  return a;
}

ad::Var apply_affine(ad::Var x, const AxisAffine& a) {
  ad::Tape& t = *x.tape;
  const Index n = x.rows();
  const ad::Var s = t.constant(a.scale.replicate(n, 1));
  const ad::Var o = t.constant(a.offset.replicate(n, 1));
  return ad::add(ad::mul(x, s), o);
}

}  // namespace

Matrix normalize_coords(const Matrix& coords, const SceneFrame& frame) {
  const AxisAffine a = minmax_affine(frame);
  Matrix out = coords.array().rowwise() * a.scale.array();
  out.rowwise() += a.offset;
  return out;
}

HiddenState init_hidden(const MergedSet& merged, Index superpoints, const SceneFrame& frame) {
  HiddenState h;
  h.centroids = scatter_mean(merged.positions, merged.labels, superpoints, &h.empty_superpoints);
  const ad::Var mean_features = scatter_mean(merged.features, merged.labels, superpoints);
  ad::Tape& t = *merged.positions.tape;
  const ad::Var origin = t.constant(frame.origin.transpose().replicate(superpoints, 1));
  const ad::Var parts[3] = {mean_features, ad::sub(h.centroids, origin), apply_affine(h.centroids, minmax_affine(frame))};
  h.hidden = ad::concat_cols(parts);
  return h;
}

void add_attention(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng) {
  add_linear(store, prefix + ".coord", 3, out, rng);
  add_linear(store, prefix + ".feat", in, out, rng);
  add_linear(store, prefix + ".value", in, out, rng);
  if (in != out) add_linear(store, prefix + ".res", in, out, rng);
  add_norm(store, prefix + ".norm", out);
}

SuperpointState superpoint_attention(ParamBinder& p, const std::string& prefix, const SuperpointState& state,
                                     const NeighbourTable& neighbours, const AttentionOptions& options,
                                     AttentionTrace* trace) {
  const Index l = state.features.rows();
  const int k = neighbours.k;
  if (neighbours.rows != l || static_cast<Index>(neighbours.indices.size()) != l * k)
    throw ValidationError("superpoint_attention: neighbour table has " + std::to_string(neighbours.rows) +
                          " rows of k=" + std::to_string(k) + ", state has " + std::to_string(l) + " superpoints");
  if (state.centroids.rows() != l || state.centroids.cols() != 3)
    throw ValidationError("superpoint_attention: centroids must be L x 3");

  const bool has_res = p.tape().value(p(prefix + ".norm.gain")).cols() != state.features.cols();
  const ad::Var residual = has_res ? nn::linear(p, prefix + ".res", state.features) : state.features;

  SuperpointState out;
  out.centroids = state.centroids;
  out.iteration = state.iteration + 1;
  if (options.mode == AttentionMode::kDisabled) {
    out.features = nn::norm(p, prefix + ".norm", residual, options.eps);
    return out;
  }

  // Neighbour order is canonicalized so the result does not depend on it.
  std::vector<std::int64_t> self_index(static_cast<std::size_t>(l * k));
  std::vector<std::int64_t> nbr_index(neighbours.indices);
  for (Index i = 0; i < l; ++i) {
    auto row = nbr_index.begin() + i * k;
    std::sort(row, row + k);
    std::fill(self_index.begin() + i * k, self_index.begin() + (i + 1) * k, i);
  }

  const ad::Var dc = ad::sub(ad::gather_rows(state.centroids, self_index), ad::gather_rows(state.centroids, nbr_index));
  const ad::Var df = ad::sub(ad::gather_rows(state.features, self_index), ad::gather_rows(state.features, nbr_index));
  const ad::Var wc = nn::linear(p, prefix + ".coord", dc);
  const ad::Var wf = nn::linear(p, prefix + ".feat", df);
  ad::Var logits = ad::mul(wc, wf);
  if (options.reduction == AttentionReduction::kChannelSum) logits = ad::row_sum(logits);
  const ad::Var fused = ad::softmax_groups(logits, k);
  if (trace) *trace = AttentionTrace{fused.value(), l, k};

  const ad::Var values = ad::gather_rows(nn::linear(p, prefix + ".value", state.features), nbr_index);
  const ad::Var weighted =
      options.reduction == AttentionReduction::kChannelSum ? ad::mul_col(values, fused) : ad::mul(values, fused);
  const ad::Var aggregated = ad::scatter_sum(weighted, self_index, l);
  out.features = nn::norm(p, prefix + ".norm", ad::add(aggregated, residual), options.eps);
  return out;
}

void add_fusion(ParamStore& store, const std::string& prefix, Index element_width, Index superpoint_width,
                Index out, int kernel_size, Rng& rng) {
  const Index in = element_width + superpoint_width;
  const int volume = kernel_size == 3 ? 27 : 1;
  // Fan-in counts every kernel tap.
  const double a = 1.0 / std::sqrt(static_cast<double>(in * volume));
  Matrix w(volume * in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  Matrix b(1, out);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-a, a);
  store.add(prefix + ".conv.weight", std::move(w));
  store.add(prefix + ".conv.bias", std::move(b));
  add_norm(store, prefix + ".norm", out);
}

ad::Var superpoint_voxel_fusion(ParamBinder& p, const std::string& prefix, const SuperpointState& state,
                                const MergedSet& merged, const FusionOptions& options) {
  const ad::Var broadcasted = broadcast(state.features, merged.labels);
  const ad::Var parts[2] = {merged.features, broadcasted};
  const ad::Var fusion = ad::concat_cols(parts);

  const Quantization q = quantize(merged.positions.value(), options.output_voxel_size);
  const auto voxels = static_cast<Index>(q.coords.size());
  const ad::Var voxel_features = scatter_mean(fusion, q.element_to_voxel, voxels);
  const ConvRulebook rules = build_rulebook(q.coords, options.kernel_size);
  const ad::Var conv = sparse_conv3(voxel_features, p(prefix + ".conv.weight"), p(prefix + ".conv.bias"), rules);
  const ad::Var refined = ad::elu(nn::norm(p, prefix + ".norm", conv, options.eps));
  return ad::gather_rows(refined, q.element_to_voxel);
}

void add_grouping_stack(ParamStore& store, const PipelineConfig& config, Rng& rng) {
  validate_config(config);
  Index state_width = config.hidden_width();
  Index element_width = config.channels;
  for (int i = 0; i < config.iterations; ++i) {
    const Index w = config.width_schedule[static_cast<std::size_t>(i)];
    add_attention(store, "group" + std::to_string(i) + ".attn", state_width, w, rng);
    // The last fusion output would feed nothing, so it is not built.
    if (i + 1 < config.iterations) {
      add_fusion(store, "group" + std::to_string(i) + ".fusion", element_width, w, w, config.spffn_kernel, rng);
      element_width = w;
      state_width = w;
    }
  }
}

GroupingOutput run_grouping_stack(ParamBinder& p, const MergedSet& merged, Index superpoints,
                                  const SceneFrame& frame, const PipelineConfig& config) {
  if (static_cast<int>(config.width_schedule.size()) < config.iterations)
    throw ValidationError("run_grouping_stack: width schedule shorter than iteration count");
  if (config.iterations < 1) throw ValidationError("run_grouping_stack: iterations must be >= 1");

  GroupingOutput out;
  out.initial = init_hidden(merged, superpoints, frame);
  out.neighbours = knn_superpoints(out.initial.centroids.value(), config.neighbours);

  const AttentionOptions attn{config.attention_mode, config.attention_reduction, config.norm_eps};
  const FusionOptions fuse{config.output_voxel_size, config.spffn_kernel, config.norm_eps};

  MergedSet current = merged;
  SuperpointState state{out.initial.centroids, out.initial.hidden, 0};
  std::vector<ad::Var> head_parts{out.initial.hidden};
  for (int i = 0; i < config.iterations; ++i) {
    const std::string name = "group" + std::to_string(i);
    if (i > 0) state = SuperpointState{out.initial.centroids, scatter_mean(current.features, current.labels, superpoints), i};
    AttentionTrace trace;
    const SuperpointState attended = superpoint_attention(p, name + ".attn", state, out.neighbours, attn, &trace);
    out.iteration_outputs.push_back(attended.features);
    out.iteration_centroids.push_back(attended.centroids.value());
    out.attention.push_back(std::move(trace));
    head_parts.push_back(attended.features);
    if (i + 1 < config.iterations) current.features = superpoint_voxel_fusion(p, name + ".fusion", attended, current, fuse);
  }
  out.head_input = ad::concat_cols(head_parts);
  return out;
}

}  // namespace spg
