#pragma once

#include <cstdint>

#include "spg/scene.hpp"

namespace spg {

struct SynthSpec {
  int min_objects = 3;
  int max_objects = 6;
  double min_size = 0.3;  // meters, per axis
  double max_size = 1.0;
  int class_count = 4;
  int points_per_object = 800;
  int clutter_points = 400;
  std::uint64_t seed = 0;
  Vec3 room = Vec3(4.0, 4.0, 2.0);  // extent from the origin
  // Each object is cut into (splits_x * splits_y * splits_z) oracle superpoints.
  int splits_x = 2;
  int splits_y = 2;
  int splits_z = 1;
  // Side of the square floor cells that group clutter into background superpoints.
  double clutter_cell = 1.0;
  int max_retries = 200;
};

void validate_synth_spec(const SynthSpec& spec);

// Boxes rest on the floor without overlap; object points lie on the box
// surface with a class-dependent color. Clutter points lie on the floor
// outside every box. Throws ValidationError if placement fails.
Scene synthesize(const SynthSpec& spec);

}  // namespace spg
