#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "agfa/volume.hpp"

namespace agfa {

// Synthetic branching-vessel volume, the hermetic stand-in for clinical
// angiography data. A piecewise-curved trunk with tapering radius runs
// through the volume; side branches split off at random stations. The
// rasterized mask is a single 26-connected component by construction
// (branch centerlines start on their parent, stamps overlap along the
// path). Intensities are vessel/background levels plus Gaussian noise.
struct PhantomSpec {
  uint64_t seed = 0;
  std::array<int, 3> extents{32, 32, 32};        // (D,H,W)
  std::array<double, 3> spacing{0.5, 0.35, 0.35};  // mm
  int branch_count = 3;                          // total centerline tips
  double radius_min_mm = 0.8;                    // must cover >= 1 voxel
  double radius_max_mm = 1.8;
  double curvature = 0.3;       // direction jitter per step, 0 = straight
  double vessel_intensity = 1.0;
  double background_intensity = 0.0;
  double noise_sigma = 0.05;
};

void validate_phantom_spec(const PhantomSpec& spec);

struct PhantomTrace {
  std::vector<std::array<double, 3>> tips_mm;  // centerline endpoints
  int branches_spawned = 0;
};

Sample generate_phantom(const PhantomSpec& spec, PhantomTrace* trace = nullptr);

}  // namespace agfa
