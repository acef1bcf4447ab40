#include "agfa/augment.hpp"

#include <cmath>
#include <string>

#include "agfa/error.hpp"

namespace agfa {

void validate_augment_options(const AugmentOptions& opts) {
  if (opts.max_rotation_deg < 0.0 || opts.max_rotation_deg > 20.0)
    fail(ErrorKind::kInvalidArgument,
         "augment: rotation bound must lie within [0, 20] degrees, got " +
             std::to_string(opts.max_rotation_deg));
  if (opts.rotate_probability < 0 || opts.rotate_probability > 1 || opts.flip_probability < 0 ||
      opts.flip_probability > 1)
    fail(ErrorKind::kInvalidArgument, "augment: probabilities must lie in [0, 1]");
  for (int e : opts.crop_extents)
    if (e <= 0) fail(ErrorKind::kInvalidArgument, "augment: crop extents must be positive");
}

double draw_rotation_angle(Rng& rng, double max_deg) {
  if (max_deg < 0.0 || max_deg > 20.0)
    fail(ErrorKind::kInvalidArgument, "rotation bound must lie within [0, 20] degrees");
  return rng.uniform(-max_deg, max_deg);
}

Sample rotate_axial(const Sample& sample, double angle_deg) {
  const auto& e = sample.volume.geom.extents;
  const int D = e[0], H = e[1], W = e[2];
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;

  Sample out;
  out.id = sample.id;
  out.volume.geom = sample.volume.geom;
  out.mask.geom = sample.mask.geom;
  out.volume.intensities.assign(sample.volume.intensities.size(), 0.0);
  out.mask.values.assign(sample.mask.values.size(), 0);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // inverse map: source coordinates of output voxel (y, x)
      const double dy = y - cy, dx = x - cx;
      const double sy = c * dy + s * dx + cy;
      const double sx = -s * dy + c * dx + cx;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const int yn = static_cast<int>(std::lround(sy));
      const int xn = static_cast<int>(std::lround(sx));

      for (int z = 0; z < D; ++z) {
        const int64_t oi = (static_cast<int64_t>(z) * H + y) * W + x;
        // bilinear in-plane for intensities
        double acc = 0.0;
        for (int jy = 0; jy <= 1; ++jy)
          for (int jx = 0; jx <= 1; ++jx) {
            const int yy = y0 + jy, xx = x0 + jx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            const double w = (jy ? fy : 1 - fy) * (jx ? fx : 1 - fx);
            acc += w * sample.volume.intensities[(static_cast<int64_t>(z) * H + yy) * W + xx];
          }
        out.volume.intensities[oi] = acc;
        // nearest for the mask
        if (yn >= 0 && yn < H && xn >= 0 && xn < W)
          out.mask.values[oi] = sample.mask.values[(static_cast<int64_t>(z) * H + yn) * W + xn];
      }
    }
  }
  return out;
}

Sample flip_width(const Sample& sample) {
  const auto& e = sample.volume.geom.extents;
  const int D = e[0], H = e[1], W = e[2];
  Sample out;
  out.id = sample.id;
  out.volume.geom = sample.volume.geom;
  out.mask.geom = sample.mask.geom;
  out.volume.intensities.resize(sample.volume.intensities.size());
  out.mask.values.resize(sample.mask.values.size());
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int64_t src = (static_cast<int64_t>(z) * H + y) * W + (W - 1 - x);
        const int64_t dst = (static_cast<int64_t>(z) * H + y) * W + x;
        out.volume.intensities[dst] = sample.volume.intensities[src];
        out.mask.values[dst] = sample.mask.values[src];
      }
  return out;
}

Sample crop(const Sample& sample, std::array<int, 3> corner, std::array<int, 3> extents) {
  const auto& e = sample.volume.geom.extents;
  for (int a = 0; a < 3; ++a) {
    if (extents[a] > e[a])
      fail(ErrorKind::kInvalidArgument, "crop: window extent " + std::to_string(extents[a]) +
                                            " exceeds volume extent " + std::to_string(e[a]) +
                                            " on axis " + std::to_string(a));
    if (corner[a] < 0 || corner[a] + extents[a] > e[a])
      fail(ErrorKind::kInvalidArgument, "crop: window leaves the volume on axis " + std::to_string(a));
  }
  Sample out;
  out.id = sample.id;
  Geometry g = sample.volume.geom;
  g.extents = extents;
  for (int a = 0; a < 3; ++a) g.origin[a] += corner[a] * g.spacing[a];
  out.volume.geom = g;
  out.mask.geom = g;
  out.volume.intensities.resize(g.voxel_count());
  out.mask.values.resize(g.voxel_count());
  for (int z = 0; z < extents[0]; ++z)
    for (int y = 0; y < extents[1]; ++y)
      for (int x = 0; x < extents[2]; ++x) {
        const int64_t src =
            (static_cast<int64_t>(z + corner[0]) * e[1] + (y + corner[1])) * e[2] + (x + corner[2]);
        const int64_t dst = (static_cast<int64_t>(z) * extents[1] + y) * extents[2] + x;
        out.volume.intensities[dst] = sample.volume.intensities[src];
        out.mask.values[dst] = sample.mask.values[src];
      }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, const AugmentOptions& opts) {
  validate_augment_options(opts);
  const auto& e = sample.volume.geom.extents;
  for (int a = 0; a < 3; ++a)
    if (opts.crop_extents[a] > e[a])
      fail(ErrorKind::kInvalidArgument, "augment: crop larger than volume on axis " + std::to_string(a));

  Sample out = sample;
  if (rng.uniform() < opts.rotate_probability) {
    const double angle = draw_rotation_angle(rng, opts.max_rotation_deg);
    out = rotate_axial(out, angle);
  }
  if (rng.uniform() < opts.flip_probability) out = flip_width(out);
  std::array<int, 3> corner{};
  for (int a = 0; a < 3; ++a)
    corner[a] = static_cast<int>(rng.uniform_int(0, e[a] - opts.crop_extents[a]));
  return crop(out, corner, opts.crop_extents);
}

}  // namespace agfa
