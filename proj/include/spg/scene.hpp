#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "spg/autodiff.hpp"

namespace spg {

using Vec3 = Eigen::Vector3d;

// N x 3 positions in meters and N x 3 colors in [0, 1].
struct PointCloud {
  Matrix positions;
  Matrix colors;

  Index size() const { return positions.rows(); }
};

// Axis-aligned box.
struct Box3 {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();

  Vec3 min() const { return center - 0.5 * size; }
  Vec3 max() const { return center + 0.5 * size; }
  double volume() const { return size.prod(); }
  // Closed-interval containment.
  bool contains(const Vec3& p) const;
};

struct LabeledBox {
  Box3 box;
  int class_id = 0;
};

struct Scene {
  PointCloud cloud;
  std::vector<LabeledBox> ground_truth;
  int class_count = 1;
  // Optional precomputed over-segmentation, one label per point.
  std::optional<std::vector<std::uint32_t>> superpoint_labels;
};

struct SceneViolation {
  enum class Kind {
    kEmptyCloud,
    kShapeMismatch,
    kNonFinitePosition,
    kNonFiniteColor,
    kColorRange,
    kClassCount,
    kBoxNonFinite,
    kBoxSize,
    kBoxClass,
    kBoxOutsideCloud,
    kLabelCount,
  };
  Kind kind;
  Index index = 0;
  std::string message;
};

// All invariant violations, sorted by (kind, index). Never throws.
std::vector<SceneViolation> validate_scene(const Scene& scene);

// Throws ValidationError listing the violations if the scene is invalid.
void require_valid(const Scene& scene);

// Axis-aligned bounds of the cloud: (min, max).
std::pair<Vec3, Vec3> cloud_bounds(const PointCloud& cloud);

// SPG3 binary scene plus `<stem>.json` sidecar next to it.
std::filesystem::path sidecar_path(const std::filesystem::path& scene_path);
Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

// In-memory forms of the two files, used by the file functions above.
std::string encode_points(const PointCloud& cloud);
PointCloud decode_points(const std::string& bytes);
std::string encode_sidecar(const Scene& scene);
void decode_sidecar(const std::string& text, Scene& scene);

}  // namespace spg
