#include "spg/harness.hpp"

#include <chrono>
#include <cstdio>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"

namespace spg {

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  return rng.next();
}

std::vector<Scene> synth_scenes(const SynthSpec& base, int count, std::uint64_t seed) {
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i) {
    SynthSpec s = base;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    out.push_back(synthesize(s));
  }
  return out;
}

OverfitResult run_overfit(const OverfitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  OverfitResult r;
  SynthSpec spec = options.synth;
  spec.class_count = options.config.class_count;
  r.scenes = synth_scenes(spec, options.scenes, options.seed);
  std::vector<PreparedScene> prepared;
  for (const Scene& s : r.scenes) prepared.push_back(prepare_scene(s, options.config));

  r.params = init_model(options.config, derive_seed(options.seed, 1000));
  AdamState state;
  for (int step = 0; step < options.steps; ++step) {
    r.curve.push_back(train_step(prepared, r.params, state, options.config,
                                        options.config.learning_rate_at(step, options.steps)));
    if (options.on_step) options.on_step(step, r.curve.back());
  }
  r.final_loss = loss_and_gradients(prepared, r.params, options.config, nullptr);

  std::vector<SceneDetections> eval_in;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    r.detections.push_back(infer(prepared[i], r.params, options.config));
    eval_in.push_back({r.detections.back(), r.scenes[i].ground_truth});
  }
  r.eval = evaluate(eval_in);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string loss_csv(const std::vector<StepResult>& curve) {
  std::string out = "step,total,vote,cntr,box,cls\n";
  char line[256];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const StepResult& s = curve[i];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, s.total, s.vote, s.cntr, s.box, s.cls);
    out += line;
  }
  return out;
}

}  // namespace spg
