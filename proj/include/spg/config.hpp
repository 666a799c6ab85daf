#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spg/superpoint.hpp"

namespace spg {

enum class MergeMode { kGeometryAware, kVotesOnly };
enum class AttentionMode { kFull, kDisabled };
enum class AttentionReduction { kChannelSum, kPerChannel };

struct PipelineConfig {
  double voxel_size = 0.02;
  double output_voxel_size = 0.04;
  Index channels = 64;
  int iterations = 3;
  int neighbours = 8;
  int top_r = 18;
  std::vector<Index> width_schedule{64, 128, 128};
  Index head_hidden = 256;
  int class_count = 4;
  int spffn_kernel = 3;

  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  double beta_vote = 1.0;
  double beta_cntr = 1.0;
  double beta_box = 1.0;
  double beta_cls = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  double nms_iou = 0.5;
  double score_floor = 0.01;
  double norm_eps = 1e-5;

  // Featurizer sees scene-min-subtracted positions.
  bool normalize_positions = true;
  MergeMode merge_mode = MergeMode::kGeometryAware;
  AttentionMode attention_mode = AttentionMode::kFull;
  AttentionReduction attention_reduction = AttentionReduction::kChannelSum;

  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  // Step decay: multiply the rate by lr_decay_factor at each listed fraction of the run.
  std::vector<double> lr_decay_at{0.6, 0.8};
  double lr_decay_factor = 0.1;

  double learning_rate_at(int step, int total_steps) const;

  SegmentOptions segment;
  std::uint64_t seed = 0;

  // Width fed to the detection head: 70-dim hidden state plus each iteration's output.
  Index head_input_width() const;
  Index hidden_width() const { return channels + 6; }
};

// Throws ValidationError on any out-of-range value.
void validate_config(const PipelineConfig& config);

// Flat `key = value` text; '#' starts a comment. Unknown keys are rejected.
// Keys not present keep the values already in `config`.
void apply_config_text(PipelineConfig& config, const std::string& text);
void apply_config_entry(PipelineConfig& config, const std::string& key, const std::string& value);
PipelineConfig load_config(const std::filesystem::path& path);
// Every key with its current value, in the same syntax the parser accepts.
std::string dump_config(const PipelineConfig& config);

}  // namespace spg
