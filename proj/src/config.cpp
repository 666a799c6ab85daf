#include "spg/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "spg/error.hpp"

namespace spg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Field real(T PipelineConfig::*member) {
  return {[member](PipelineConfig& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); },
          [member](const PipelineConfig& c) { return fmt(c.*member); }};
}

template <typename T>
Field integer(T PipelineConfig::*member) {
  return {[member](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<T>(parse_int(k, v));
          },
          [member](const PipelineConfig& c) { return std::to_string(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["voxel_size"] = real(&PipelineConfig::voxel_size);
    t["output_voxel_size"] = real(&PipelineConfig::output_voxel_size);
    t["channels"] = integer(&PipelineConfig::channels);
    t["iterations"] = integer(&PipelineConfig::iterations);
    t["neighbours"] = integer(&PipelineConfig::neighbours);
    t["top_r"] = integer(&PipelineConfig::top_r);
    t["head_hidden"] = integer(&PipelineConfig::head_hidden);
    t["class_count"] = integer(&PipelineConfig::class_count);
    t["spffn_kernel"] = integer(&PipelineConfig::spffn_kernel);
    t["lambda_cls"] = real(&PipelineConfig::lambda_cls);
    t["lambda_reg"] = real(&PipelineConfig::lambda_reg);
    t["beta_vote"] = real(&PipelineConfig::beta_vote);
    t["beta_cntr"] = real(&PipelineConfig::beta_cntr);
    t["beta_box"] = real(&PipelineConfig::beta_box);
    t["beta_cls"] = real(&PipelineConfig::beta_cls);
    t["focal_alpha"] = real(&PipelineConfig::focal_alpha);
    t["focal_gamma"] = real(&PipelineConfig::focal_gamma);
    t["nms_iou"] = real(&PipelineConfig::nms_iou);
    t["score_floor"] = real(&PipelineConfig::score_floor);
    t["norm_eps"] = real(&PipelineConfig::norm_eps);
    t["learning_rate"] = real(&PipelineConfig::learning_rate);
    t["weight_decay"] = real(&PipelineConfig::weight_decay);
    t["lr_decay_factor"] = real(&PipelineConfig::lr_decay_factor);
    t["lr_decay_at"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          std::vector<double> at;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) at.push_back(parse_double(k, item));
          }
          c.lr_decay_at = at;
        },
        [](const PipelineConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.lr_decay_at.size(); ++i) out += (i ? "," : "") + fmt(c.lr_decay_at[i]);
          return out;
        }};
    t["seed"] = integer(&PipelineConfig::seed);
    t["normalize_positions"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) { c.normalize_positions = parse_bool(k, v); },
        [](const PipelineConfig& c) { return std::string(c.normalize_positions ? "true" : "false"); }};
    t["width_schedule"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          std::vector<Index> widths;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) widths.push_back(static_cast<Index>(parse_int(k, trim(item))));
          c.width_schedule = widths;
        },
        [](const PipelineConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.width_schedule.size(); ++i)
            out += (i ? "," : "") + std::to_string(c.width_schedule[i]);
          return out;
        }};
    t["merge_mode"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v == "geometry_aware") c.merge_mode = MergeMode::kGeometryAware;
          else if (v == "votes_only") c.merge_mode = MergeMode::kVotesOnly;
          else throw ValidationError("config: '" + k + "' must be geometry_aware or votes_only");
        },
        [](const PipelineConfig& c) {
          return std::string(c.merge_mode == MergeMode::kGeometryAware ? "geometry_aware" : "votes_only");
        }};
    t["attention"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v == "full") c.attention_mode = AttentionMode::kFull;
          else if (v == "disabled") c.attention_mode = AttentionMode::kDisabled;
          else throw ValidationError("config: '" + k + "' must be full or disabled");
        },
        [](const PipelineConfig& c) {
          return std::string(c.attention_mode == AttentionMode::kFull ? "full" : "disabled");
        }};
    t["attention_reduction"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v == "channel_sum") c.attention_reduction = AttentionReduction::kChannelSum;
          else if (v == "per_channel") c.attention_reduction = AttentionReduction::kPerChannel;
          else throw ValidationError("config: '" + k + "' must be channel_sum or per_channel");
        },
        [](const PipelineConfig& c) {
          return std::string(c.attention_reduction == AttentionReduction::kChannelSum ? "channel_sum" : "per_channel");
        }};
    t["segment_graph_k"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.segment.graph_k = static_cast<int>(parse_int(k, v));
        },
        [](const PipelineConfig& c) { return std::to_string(c.segment.graph_k); }};
    t["segment_threshold"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.segment.merge_threshold = parse_double(k, v);
        },
        [](const PipelineConfig& c) { return fmt(c.segment.merge_threshold); }};
    t["segment_position_weight"] = {
        [](PipelineConfig& c, const std::string& k, const std::string& v) {
          c.segment.position_weight = parse_double(k, v);
        },
        [](const PipelineConfig& c) { return fmt(c.segment.position_weight); }};
    return t;
  }();
  return table;
}

}  // namespace

Index PipelineConfig::head_input_width() const {
  Index w = hidden_width();
  for (int i = 0; i < iterations && i < static_cast<int>(width_schedule.size()); ++i) w += width_schedule[static_cast<std::size_t>(i)];
  return w;
}

double PipelineConfig::learning_rate_at(int step, int total_steps) const {
  double lr = learning_rate;
  for (double f : lr_decay_at)
    if (step >= static_cast<int>(std::ceil(f * total_steps))) lr *= lr_decay_factor;
  return lr;
}

void validate_config(const PipelineConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  need(c.voxel_size > 0, "voxel_size must be > 0");
  need(c.output_voxel_size > 0, "output_voxel_size must be > 0");
  need(c.channels > 0, "channels must be > 0");
  need(c.iterations >= 1, "iterations must be >= 1");
  need(c.neighbours >= 1, "neighbours must be >= 1");
  need(c.top_r >= 1, "top_r must be >= 1");
  need(static_cast<int>(c.width_schedule.size()) >= c.iterations,
       "width_schedule has " + std::to_string(c.width_schedule.size()) + " entries for " +
           std::to_string(c.iterations) + " iterations");
  for (Index w : c.width_schedule) need(w > 0, "width_schedule entries must be > 0");
  need(c.head_hidden > 0, "head_hidden must be > 0");
  need(c.class_count >= 1, "class_count must be >= 1");
  need(c.spffn_kernel == 1 || c.spffn_kernel == 3, "spffn_kernel must be 1 or 3");
  need(c.lambda_cls >= 0 && c.lambda_reg >= 0, "lambda weights must be >= 0");
  need(c.beta_vote >= 0 && c.beta_cntr >= 0 && c.beta_box >= 0 && c.beta_cls >= 0, "beta weights must be >= 0");
  need(c.focal_alpha >= 0 && c.focal_alpha <= 1, "focal_alpha must be in [0,1]");
  need(c.focal_gamma >= 0, "focal_gamma must be >= 0");
  need(c.nms_iou >= 0 && c.nms_iou <= 1, "nms_iou must be in [0,1]");
  need(c.norm_eps > 0, "norm_eps must be > 0");
  need(c.learning_rate >= 0, "learning_rate must be >= 0");
  need(c.weight_decay >= 0, "weight_decay must be >= 0");
  for (double f : c.lr_decay_at) need(f >= 0 && f <= 1, "lr_decay_at entries must be in [0,1]");
  need(c.lr_decay_factor > 0 && c.lr_decay_factor <= 1, "lr_decay_factor must be in (0,1]");
  need(c.segment.graph_k >= 1, "segment_graph_k must be >= 1");
  need(c.segment.merge_threshold > 0, "segment_threshold must be > 0");
}

void apply_config_entry(PipelineConfig& config, const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ValidationError("config: unknown key '" + key + "'");
  it->second.set(config, key, value);
}

void apply_config_text(PipelineConfig& config, const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate_config(config);
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig config;
  apply_config_text(config, ss.str());
  return config;
}

std::string dump_config(const PipelineConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace spg
