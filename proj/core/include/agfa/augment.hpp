#pragma once

#include <array>

#include "agfa/rng.hpp"
#include "agfa/volume.hpp"

namespace agfa {

// Training-time augmentation triple: with independent probability 0.5 each,
// an axial in-plane rotation (uniform angle within +/- max_rotation_deg,
// capped at 20 degrees) and a width-axis flip; then always a random crop to
// crop_extents. The volume is resampled trilinearly, the mask with nearest
// neighbors; both receive identical transforms.
struct AugmentOptions {
  std::array<int, 3> crop_extents{32, 32, 32};
  double max_rotation_deg = 20.0;
  double rotate_probability = 0.5;
  double flip_probability = 0.5;
};

void validate_augment_options(const AugmentOptions& opts);

// Uniform in [-max_deg, +max_deg]; the angle source used by augment().
double draw_rotation_angle(Rng& rng, double max_deg);

// In-plane rotation about the axial (D) axis, around the volume center.
// Out-of-view samples fill with 0.
Sample rotate_axial(const Sample& sample, double angle_deg);

// Mirror along the width (W) axis.
Sample flip_width(const Sample& sample);

// Crop at the given corner; errors if the window leaves the volume.
Sample crop(const Sample& sample, std::array<int, 3> corner, std::array<int, 3> extents);

Sample augment(const Sample& sample, Rng& rng, const AugmentOptions& opts);

}  // namespace agfa
