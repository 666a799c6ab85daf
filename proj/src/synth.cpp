#include "spg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "spg/error.hpp"
#include "spg/params.hpp"

namespace spg {

namespace {

constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.85, 0.20, 0.20},
    {0.20, 0.70, 0.25},
    {0.20, 0.35, 0.85},
    {0.90, 0.80, 0.20},
    {0.70, 0.25, 0.80},
    {0.20, 0.80, 0.80},
    {0.95, 0.55, 0.15},
    {0.55, 0.55, 0.55},
}};

bool overlaps(const Box3& a, const Box3& b, double gap) {
  for (int i = 0; i < 3; ++i)
    if (a.max()[i] + gap <= b.min()[i] || b.max()[i] + gap <= a.min()[i]) return false;
  return true;
}

float to_f32(double v) { return static_cast<float>(v); }

// Uniform point on the box surface, faces weighted by area.
Vec3 surface_point(const Box3& box, Rng& rng) {
  const Vec3& s = box.size;
  const std::array<double, 3> area{s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
  const double total = 2.0 * (area[0] + area[1] + area[2]);
  double pick = rng.uniform() * total;
  int axis = 0;
  int side = 0;
  for (int f = 0; f < 6; ++f) {
    if (pick < area[static_cast<std::size_t>(f / 2)] || f == 5) {
      axis = f / 2;
      side = f % 2;
      break;
    }
    pick -= area[static_cast<std::size_t>(f / 2)];
  }
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = box.min()[i] + rng.uniform() * s[i];
  p[axis] = side ? box.max()[axis] : box.min()[axis];
  return p;
}

}  // namespace

void validate_synth_spec(const SynthSpec& s) {
  auto fail = [](const std::string& m) { throw ValidationError("synth: " + m); };
  if (s.min_objects < 1 || s.max_objects < s.min_objects) fail("object count range must satisfy 1 <= min <= max");
  if (!(s.min_size > 0.0) || !(s.max_size >= s.min_size)) fail("size range must satisfy 0 < min <= max");
  if (s.class_count < 1) fail("class_count must be >= 1");
  if (s.points_per_object < 1) fail("points_per_object must be >= 1");
  if (s.clutter_points < 0) fail("clutter_points must be >= 0");
  if (!(s.room.minCoeff() > 0.0) || !s.room.allFinite()) fail("room extent must be positive");
  if (s.max_size > s.room.minCoeff()) fail("max_size exceeds the room extent");
  if (s.splits_x < 1 || s.splits_y < 1 || s.splits_z < 1) fail("splits must be >= 1");
  if (s.splits_x * s.splits_y * s.splits_z < 2) fail("objects need at least 2 superpoints");
  if (!(s.clutter_cell > 0.0)) fail("clutter_cell must be positive");
  if (s.max_retries < 1) fail("max_retries must be >= 1");
}

Scene synthesize(const SynthSpec& spec) {
  validate_synth_spec(spec);
  Rng rng(spec.seed);
  const int objects = spec.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));

  Scene scene;
  scene.class_count = spec.class_count;
  for (int o = 0; o < objects; ++o) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      Box3 b;
      for (int i = 0; i < 3; ++i) b.size[i] = to_f32(rng.uniform(spec.min_size, spec.max_size));
      for (int i = 0; i < 2; ++i) b.center[i] = to_f32(rng.uniform(0.5 * b.size[i], spec.room[i] - 0.5 * b.size[i]));
      b.center.z() = to_f32(0.5 * b.size.z());
      if (std::none_of(scene.ground_truth.begin(), scene.ground_truth.end(),
                       [&](const LabeledBox& g) { return overlaps(b, g.box, 0.05); })) {
        scene.ground_truth.push_back({b, static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.class_count)))});
        placed = true;
      }
    }
    if (!placed)
      throw ValidationError("synth: could not place object " + std::to_string(o) + " after " +
                            std::to_string(spec.max_retries) + " tries; use smaller objects or fewer of them");
  }

  std::vector<Vec3> pos;
  std::vector<Vec3> col;
  std::vector<std::uint32_t> labels;
  std::uint32_t next_label = 0;
  const std::array<int, 3> splits{spec.splits_x, spec.splits_y, spec.splits_z};
  for (const LabeledBox& g : scene.ground_truth) {
    const auto& base = kPalette[static_cast<std::size_t>(g.class_id) % kPalette.size()];
    Vec3 tint;
    for (int i = 0; i < 3; ++i) tint[i] = std::clamp(base[static_cast<std::size_t>(i)] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
    for (int n = 0; n < spec.points_per_object; ++n) {
      const Vec3 p = surface_point(g.box, rng);
      int cell = 0;
      for (int i = 2; i >= 0; --i) {
        const double t = (p[i] - g.box.min()[i]) / g.box.size[i];
        const int c = std::clamp(static_cast<int>(t * splits[static_cast<std::size_t>(i)]), 0, splits[static_cast<std::size_t>(i)] - 1);
        cell = cell * splits[static_cast<std::size_t>(i)] + c;
      }
      Vec3 c;
      for (int i = 0; i < 3; ++i) c[i] = std::clamp(tint[i] + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      pos.push_back(p);
      col.push_back(c);
      labels.push_back(next_label + static_cast<std::uint32_t>(cell));
    }
    next_label += static_cast<std::uint32_t>(splits[0] * splits[1] * splits[2]);
  }

  // Clutter: floor points outside every box, grouped by floor cell.
  std::map<std::pair<int, int>, std::uint32_t> cell_label;
  for (int n = 0; n < spec.clutter_points; ++n) {
    Vec3 p;
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
      p = Vec3(rng.uniform(0.0, spec.room.x()), rng.uniform(0.0, spec.room.y()), 0.0);
      ok = std::none_of(scene.ground_truth.begin(), scene.ground_truth.end(), [&](const LabeledBox& g) {
        Box3 grown = g.box;
        grown.size += Vec3::Constant(0.04);
        return grown.contains(p);
      });
    }
    if (!ok) continue;
    const std::pair<int, int> key{static_cast<int>(p.x() / spec.clutter_cell), static_cast<int>(p.y() / spec.clutter_cell)};
    auto it = cell_label.find(key);
    if (it == cell_label.end()) it = cell_label.emplace(key, next_label++).first;
    const double grey = rng.uniform(0.35, 0.65);
    pos.push_back(p);
    col.push_back(Vec3::Constant(grey));
    labels.push_back(it->second);
  }

  const auto n = static_cast<Index>(pos.size());
  scene.cloud.positions.resize(n, 3);
  scene.cloud.colors.resize(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) {
      scene.cloud.positions(i, a) = to_f32(pos[static_cast<std::size_t>(i)][a]);
      scene.cloud.colors(i, a) = to_f32(col[static_cast<std::size_t>(i)][a]);
    }
  scene.superpoint_labels = std::move(labels);
  return scene;
}

}  // namespace spg
