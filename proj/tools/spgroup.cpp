// Command-line entry points: synth, segment, gradcheck, overfit, infer, match, eval.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "spg/error.hpp"
#include "spg/harness.hpp"

namespace fs = std::filesystem;
using namespace spg;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::vector<std::string> overrides;
};

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig config = c.config_path.empty() ? PipelineConfig{} : load_config(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    apply_config_entry(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  validate_config(config);
  return config;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d.spg", i);
  return buf;
}

void add_synth_options(CLI::App* cmd, SynthSpec& spec) {
  cmd->add_option("--min-objects", spec.min_objects);
  cmd->add_option("--max-objects", spec.max_objects);
  cmd->add_option("--min-size", spec.min_size);
  cmd->add_option("--max-size", spec.max_size);
  cmd->add_option("--points-per-object", spec.points_per_object);
  cmd->add_option("--clutter", spec.clutter_points);
}

std::vector<LabeledBox> load_ground_truth(const fs::path& path) {
  if (path.extension() == ".json") {
    Scene s;
    decode_sidecar(read_file(path), s);
    return s.ground_truth;
  }
  return load_scene(path).ground_truth;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"SPGroup3D desk-scale pipeline"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "RNG seed");
  app.add_option("--out", common.out, "output directory");
  app.add_option("--set", common.overrides, "config override key=value (repeatable)");

  SynthSpec spec;
  int synth_count = 1;
  auto* synth = app.add_subcommand("synth", "generate synthetic scenes with oracle superpoints");
  synth->add_option("--scenes", synth_count)->check(CLI::PositiveNumber);
  add_synth_options(synth, spec);

  std::string scene_path;
  auto* segment = app.add_subcommand("segment", "graph over-segmentation of a scene");
  segment->add_option("--scene", scene_path)->required()->check(CLI::ExistingFile);

  int instances = 3;
  double tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--instances", instances)->check(CLI::PositiveNumber);
  gradcheck->add_option("--tol", tol);

  int scenes = 5;
  int steps = 500;
  bool quiet = false;
  auto* overfit = app.add_subcommand("overfit", "train on synthetic scenes and evaluate on them");
  overfit->add_option("--scenes", scenes)->check(CLI::PositiveNumber);
  overfit->add_option("--steps", steps)->check(CLI::NonNegativeNumber);
  overfit->add_flag("--quiet", quiet);
  add_synth_options(overfit, spec);

  std::string weights_path;
  auto* infer_cmd = app.add_subcommand("infer", "detect objects in a scene");
  infer_cmd->add_option("--scene", scene_path)->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--weights", weights_path)->check(CLI::ExistingFile);

  auto* match = app.add_subcommand("match", "training-time assignment of proposals to boxes");
  match->add_option("--scene", scene_path)->required()->check(CLI::ExistingFile);
  match->add_option("--weights", weights_path)->check(CLI::ExistingFile);

  std::string pred_path;
  std::string gt_path;
  auto* eval = app.add_subcommand("eval", "mAP of detections against ground truth");
  eval->add_option("--pred", pred_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--gt", gt_path, "scene file or its sidecar JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const fs::path out = common.out;
    const PipelineConfig config = resolve_config(common);
    auto load_params = [&](const PipelineConfig& cfg) {
      return weights_path.empty() ? init_model(cfg, common.seed) : ParamStore::load(weights_path);
    };

    if (*synth) {
      spec.class_count = config.class_count;
      const auto generated = synth_scenes(spec, synth_count, common.seed);
      for (int i = 0; i < synth_count; ++i) save_scene(generated[static_cast<std::size_t>(i)], out / scene_name(i));
      std::cout << "wrote " << synth_count << " scene(s) to " << out.string() << "\n";
    } else if (*segment) {
      const Scene scene = load_scene(scene_path);
      const SuperpointPartition part = segment_points(scene.cloud, config.segment);
      nlohmann::ordered_json j;
      j["count"] = part.count;
      j["labels"] = part.point_labels;
      write_file(out / "superpoints.json", j.dump() + "\n");
      std::cout << part.count << " superpoints\n";
    } else if (*gradcheck) {
      const auto entries = run_gradient_suite(instances, common.seed);
      write_file(out / "gradcheck.json", gradient_suite_json(entries, tol) + "\n");
      bool ok = true;
      for (const auto& e : entries) {
        const bool pass = e.report.passed(tol);
        ok = ok && pass;
        std::printf("%-34s %s  %s\n", e.op.c_str(), pass ? "ok  " : "FAIL", e.report.describe().c_str());
      }
      return ok ? 0 : 2;
    } else if (*overfit) {
      OverfitOptions opt;
      opt.config = config;
      opt.synth = spec;
      opt.scenes = scenes;
      opt.steps = steps;
      opt.seed = common.seed;
      if (!quiet)
        opt.on_step = [](int step, const StepResult& r) {
          if (step % 10 == 0) std::printf("step %4d  total %.5f\n", step, r.total);
          std::fflush(stdout);
        };
      const OverfitResult r = run_overfit(opt);
      write_file(out / "loss.csv", loss_csv(r.curve));
      r.params.save(out / "weights.json");
      write_file(out / "eval.json", r.eval.to_json() + "\n");
      for (std::size_t i = 0; i < r.scenes.size(); ++i) {
        save_scene(r.scenes[i], out / scene_name(static_cast<int>(i)));
        write_file(out / (fs::path(scene_name(static_cast<int>(i))).stem().string() + ".detections.json"),
                   detections_to_json(r.detections[i]) + "\n");
      }
      std::printf("final loss %.5f  mAP@0.25 %.4f  mAP@0.5 %.4f  (%.1f s)\n", r.final_loss.total, r.eval.map[0],
                  r.eval.map[1], r.seconds);
    } else if (*infer_cmd) {
      const Scene scene = load_scene(scene_path);
      const PreparedScene prepared = prepare_scene(scene, config);
      const auto dets = infer(prepared, load_params(config), config);
      write_file(out / "detections.json", detections_to_json(dets) + "\n");
      std::cout << dets.size() << " detection(s)\n";
    } else if (*match) {
      const Scene scene = load_scene(scene_path);
      const PreparedScene prepared = prepare_scene(scene, config);
      const ParamStore params = load_params(config);
      ad::Tape tape;
      ParamBinder p(tape, params);
      const SceneLoss sl = scene_loss(forward(p, prepared, config), prepared, config);
      write_file(out / "assignment.json", sl.assignment.to_json() + "\n");
      std::cout << sl.assignment.positive_count() << " positive(s)\n";
    } else if (*eval) {
      const auto dets = detections_from_json(read_file(pred_path));
      const EvalResult r = evaluate({SceneDetections{dets, load_ground_truth(gt_path)}});
      write_file(out / "eval.json", r.to_json() + "\n");
      std::printf("mAP@0.25 %.4f  mAP@0.5 %.4f\n", r.map[0], r.map[1]);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
