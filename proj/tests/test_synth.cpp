#include <gtest/gtest.h>

#include <map>
#include <set>

#include "spg/error.hpp"
#include "spg/synth.hpp"

using namespace spg;

namespace {

double surface_distance(const Box3& b, const Vec3& p) {
  const Vec3 lo = b.min(), hi = b.max();
  double inside = 1e300;
  for (int a = 0; a < 3; ++a) {
    if (p[a] < lo[a] - 1e-6 || p[a] > hi[a] + 1e-6) return 1e300;
    inside = std::min({inside, std::abs(p[a] - lo[a]), std::abs(p[a] - hi[a])});
  }
  return inside;
}

}  // namespace

TEST(Synth, SingleObjectOnSurface) {
  SynthSpec s;
  s.min_objects = s.max_objects = 1;
  s.clutter_points = 0;
  s.points_per_object = 500;
  const Scene scene = synthesize(s);
  ASSERT_EQ(scene.ground_truth.size(), 1u);
  ASSERT_EQ(scene.cloud.size(), 500);
  const Box3& b = scene.ground_truth[0].box;
  EXPECT_NEAR(b.min().z(), 0.0, 1e-6);
  for (Index i = 0; i < scene.cloud.size(); ++i)
    EXPECT_LE(surface_distance(b, scene.cloud.positions.row(i).transpose()), 1e-6);
}

TEST(Synth, DeterministicAndValid) {
  SynthSpec s;
  s.seed = 9;
  const Scene a = synthesize(s), b = synthesize(s);
  EXPECT_EQ(a.cloud.positions, b.cloud.positions);
  EXPECT_EQ(a.cloud.colors, b.cloud.colors);
  EXPECT_EQ(*a.superpoint_labels, *b.superpoint_labels);
  EXPECT_TRUE(validate_scene(a).empty());
  EXPECT_GE(a.ground_truth.size(), 3u);
  EXPECT_LE(a.ground_truth.size(), 6u);
  s.seed = 10;
  const Scene c = synthesize(s);
  EXPECT_FALSE(c.cloud.size() == a.cloud.size() && c.cloud.positions == a.cloud.positions);
}

TEST(Synth, BoxesDisjointAndLabelsPure) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec s;
    s.seed = seed;
    const Scene sc = synthesize(s);
    for (std::size_t i = 0; i < sc.ground_truth.size(); ++i) {
      for (std::size_t j = i + 1; j < sc.ground_truth.size(); ++j) {
        const Box3 &a = sc.ground_truth[i].box, &b = sc.ground_truth[j].box;
        bool separated = false;
        for (int k = 0; k < 3; ++k) separated |= a.max()[k] <= b.min()[k] || b.max()[k] <= a.min()[k];
        EXPECT_TRUE(separated);
      }
    }
    // Every oracle superpoint lies within at most one object box.
    std::map<std::uint32_t, std::set<int>> owners;
    for (Index p = 0; p < sc.cloud.size(); ++p) {
      int owner = -1;
      for (std::size_t g = 0; g < sc.ground_truth.size(); ++g)
        if (surface_distance(sc.ground_truth[g].box, sc.cloud.positions.row(p).transpose()) < 1e299)
          owner = static_cast<int>(g);
      owners[(*sc.superpoint_labels)[static_cast<std::size_t>(p)]].insert(owner);
    }
    for (const auto& [label, set] : owners) EXPECT_EQ(set.size(), 1u) << "superpoint " << label;
  }
}

TEST(Synth, RejectsImpossibleSpecs) {
  SynthSpec s;
  s.min_objects = s.max_objects = 40;
  s.min_size = s.max_size = 1.5;
  s.max_retries = 20;
  EXPECT_THROW(synthesize(s), ValidationError);
  s = SynthSpec{};
  s.min_objects = 5;
  s.max_objects = 2;
  EXPECT_THROW(synthesize(s), ValidationError);
  s = SynthSpec{};
  s.class_count = 0;
  EXPECT_THROW(synthesize(s), ValidationError);
}
