#include "spg/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "spg/error.hpp"

namespace spg {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'G', '3'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 12;
constexpr std::size_t kRowBytes = 6 * 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out += static_cast<char>((v >> (8 * b)) & 0xFF);
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= std::uint32_t(std::uint8_t(in[at + b])) << (8 * b);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("sidecar: '" + what + "' must have 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

bool Box3::contains(const Vec3& p) const {
  const Vec3 lo = min();
  const Vec3 hi = max();
  return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
}

std::pair<Vec3, Vec3> cloud_bounds(const PointCloud& cloud) {
  if (cloud.size() == 0) return {Vec3::Zero(), Vec3::Zero()};
  return {cloud.positions.colwise().minCoeff().transpose(), cloud.positions.colwise().maxCoeff().transpose()};
}

std::vector<SceneViolation> validate_scene(const Scene& scene) {
  using Kind = SceneViolation::Kind;
  std::vector<SceneViolation> out;
  const PointCloud& c = scene.cloud;
  const char* axis = "xyz";
  const char* channel = "rgb";
  if (c.size() < 1) out.push_back({Kind::kEmptyCloud, 0, "cloud has no points"});
  if (c.positions.cols() != 3 || c.colors.cols() != 3 || c.colors.rows() != c.positions.rows()) {
    out.push_back({Kind::kShapeMismatch, 0, "positions and colors must both be N x 3"});
    return out;
  }
  bool finite_cloud = true;
  for (Index i = 0; i < c.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(c.positions(i, a))) {
        finite_cloud = false;
        out.push_back({Kind::kNonFinitePosition, i,
                       "point " + std::to_string(i) + " has non-finite " + axis[a] + " coordinate"});
      }
      const double col = c.colors(i, a);
      if (!std::isfinite(col)) {
        out.push_back({Kind::kNonFiniteColor, i,
                       "point " + std::to_string(i) + " has non-finite color channel " + channel[a]});
      } else if (col < 0.0 || col > 1.0) {
        out.push_back({Kind::kColorRange, i,
                       "point " + std::to_string(i) + " color channel " + channel[a] + " = " +
                           std::to_string(col) + " outside [0,1]"});
      }
    }
  }
  if (scene.class_count < 1) out.push_back({Kind::kClassCount, 0, "class_count must be >= 1"});
  const auto [lo, hi] = cloud_bounds(c);
  for (std::size_t b = 0; b < scene.ground_truth.size(); ++b) {
    const LabeledBox& lb = scene.ground_truth[b];
    const Index bi = static_cast<Index>(b);
    const std::string name = "box " + std::to_string(b);
    if (!lb.box.center.allFinite() || !lb.box.size.allFinite()) {
      out.push_back({Kind::kBoxNonFinite, bi, name + " has non-finite center or size"});
      continue;
    }
    for (int a = 0; a < 3; ++a) {
      if (!(lb.box.size[a] > 0.0))
        out.push_back({Kind::kBoxSize, bi, name + " size." + axis[a] + " must be > 0"});
    }
    if (lb.class_id < 0 || lb.class_id >= scene.class_count)
      out.push_back({Kind::kBoxClass, bi,
                     name + " class_id " + std::to_string(lb.class_id) + " outside [0," +
                         std::to_string(scene.class_count) + ")"});
    if (finite_cloud && c.size() > 0) {
      const bool overlap = (lb.box.min().array() <= hi.array()).all() && (lb.box.max().array() >= lo.array()).all();
      if (!overlap) out.push_back({Kind::kBoxOutsideCloud, bi, name + " does not intersect the cloud bounds"});
    }
  }
  if (scene.superpoint_labels && static_cast<Index>(scene.superpoint_labels->size()) != c.size())
    out.push_back({Kind::kLabelCount, 0,
                   "superpoint_labels has " + std::to_string(scene.superpoint_labels->size()) +
                       " entries for " + std::to_string(c.size()) + " points"});
  std::stable_sort(out.begin(), out.end(), [](const SceneViolation& a, const SceneViolation& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.index < b.index;
  });
  return out;
}

void require_valid(const Scene& scene) {
  const auto violations = validate_scene(scene);
  if (violations.empty()) return;
  std::string msg = "invalid scene:";
  for (std::size_t i = 0; i < violations.size() && i < 10; ++i) msg += "\n  " + violations[i].message;
  if (violations.size() > 10) msg += "\n  ... " + std::to_string(violations.size() - 10) + " more";
  throw ValidationError(msg);
}

std::filesystem::path sidecar_path(const std::filesystem::path& scene_path) {
  if (scene_path.extension() == ".json")
    throw ValidationError("scene path '" + scene_path.string() + "' collides with its sidecar name");
  std::filesystem::path p = scene_path;
  p.replace_extension(".json");
  return p;
}

std::string encode_points(const PointCloud& cloud) {
  std::string out;
  out.reserve(kHeaderBytes + static_cast<std::size_t>(cloud.size()) * kRowBytes);
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(cloud.positions(i, a))));
    for (int a = 0; a < 3; ++a) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(cloud.colors(i, a))));
  }
  return out;
}

PointCloud decode_points(const std::string& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw FormatError("bad magic, expected \"SPG3\"", 0);
  if (bytes.size() < 8) throw FormatError("truncated header", bytes.size());
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version), 4);
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header", bytes.size());
  const std::uint32_t n = get_u32(bytes, 8);
  const std::size_t expected = kHeaderBytes + std::size_t(n) * kRowBytes;
  if (bytes.size() < expected)
    throw FormatError("truncated payload: " + std::to_string(n) + " points need " + std::to_string(expected) +
                          " bytes, file has " + std::to_string(bytes.size()),
                      bytes.size());
  if (bytes.size() > expected) throw FormatError("trailing bytes after point payload", expected);
  PointCloud cloud{Matrix(n, 3), Matrix(n, 3)};
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int k = 0; k < 6; ++k) {
      const std::size_t at = kHeaderBytes + std::size_t(i) * kRowBytes + std::size_t(k) * 4;
      const float v = std::bit_cast<float>(get_u32(bytes, at));
      if (!std::isfinite(v)) throw FormatError("non-finite value in point " + std::to_string(i), at);
      (k < 3 ? cloud.positions(i, k) : cloud.colors(i, k - 3)) = static_cast<double>(v);
    }
  }
  return cloud;
}

std::string encode_sidecar(const Scene& scene) {
  nlohmann::ordered_json j;
  j["class_count"] = scene.class_count;
  j["boxes"] = nlohmann::ordered_json::array();
  for (const LabeledBox& b : scene.ground_truth) {
    nlohmann::ordered_json jb;
    jb["center"] = vec_json(b.box.center);
    jb["size"] = vec_json(b.box.size);
    jb["class_id"] = b.class_id;
    j["boxes"].push_back(jb);
  }
  if (scene.superpoint_labels) j["superpoint_labels"] = *scene.superpoint_labels;
  return j.dump(1) + "\n";
}

void decode_sidecar(const std::string& text, Scene& scene) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("sidecar: ") + e.what(), e.byte);
  }
  try {
    scene.class_count = j.at("class_count").get<int>();
    scene.ground_truth.clear();
    for (const auto& jb : j.at("boxes")) {
      LabeledBox b;
      b.box.center = json_vec(jb.at("center"), "center");
      b.box.size = json_vec(jb.at("size"), "size");
      b.class_id = jb.at("class_id").get<int>();
      scene.ground_truth.push_back(b);
    }
    if (j.contains("superpoint_labels"))
      scene.superpoint_labels = j["superpoint_labels"].get<std::vector<std::uint32_t>>();
    else
      scene.superpoint_labels.reset();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("sidecar: ") + e.what());
  }
}

Scene load_scene(const std::filesystem::path& path) {
  Scene scene;
  scene.cloud = decode_points(read_file(path));
  decode_sidecar(read_file(sidecar_path(path)), scene);
  require_valid(scene);
  return scene;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  require_valid(scene);
  const std::string points = encode_points(scene.cloud);
  const std::string sidecar = encode_sidecar(scene);
  write_file(path, points);
  write_file(sidecar_path(path), sidecar);
}

}  // namespace spg
