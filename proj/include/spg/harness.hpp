#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spg/config.hpp"
#include "spg/evaluation.hpp"
#include "spg/gradcheck.hpp"
#include "spg/pipeline.hpp"
#include "spg/synth.hpp"

namespace spg {

// Keeps freed tape buffers in the heap instead of returning them to the OS;
// training reallocates the same large matrices every step. No-op off glibc.
void configure_allocator();

// Scene i of a run uses generator seed derive_seed(seed, i).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::vector<Scene> synth_scenes(const SynthSpec& base, int count, std::uint64_t seed);

struct OverfitOptions {
  PipelineConfig config;
  SynthSpec synth;
  int scenes = 5;
  int steps = 500;
  std::uint64_t seed = 0;
  std::function<void(int, const StepResult&)> on_step;
};

struct OverfitResult {
  std::vector<Scene> scenes;
  std::vector<StepResult> curve;  // loss before each step
  StepResult final_loss;          // loss after the last step
  ParamStore params;
  std::vector<std::vector<Detection>> detections;
  EvalResult eval;
  double seconds = 0.0;
};

OverfitResult run_overfit(const OverfitOptions& options);

// `step,total,vote,cntr,box,cls`, one row per step.
std::string loss_csv(const std::vector<StepResult>& curve);

struct GradSuiteEntry {
  std::string op;
  std::uint64_t instance_seed = 0;
  GradCheckReport report;
};

// Finite-difference checks of every differentiable op on `instances` random
// inputs each.
std::vector<GradSuiteEntry> run_gradient_suite(int instances, std::uint64_t seed);
std::string gradient_suite_json(const std::vector<GradSuiteEntry>& entries, double tol);

}  // namespace spg
