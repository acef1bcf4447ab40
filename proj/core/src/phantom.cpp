#include "agfa/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agfa/error.hpp"
#include "agfa/rng.hpp"

namespace agfa {

namespace {

struct Vec3 {
  double z = 0, y = 0, x = 0;
  Vec3 operator+(const Vec3& o) const { return {z + o.z, y + o.y, x + o.x}; }
  Vec3 operator-(const Vec3& o) const { return {z - o.z, y - o.y, x - o.x}; }
  Vec3 operator*(double s) const { return {z * s, y * s, x * s}; }
  double norm() const { return std::sqrt(z * z + y * y + x * x); }
  Vec3 normalized() const {
    double n = norm();
    return n > 0 ? Vec3{z / n, y / n, x / n} : Vec3{1, 0, 0};
  }
};

struct Tube {
  std::vector<Vec3> points;  // mm, densely sampled
  std::vector<double> radii;
};

// Walks one centerline from `start` along `dir`, jittering the direction by
// the curvature and steering back when close to the volume walls.
Tube walk_tube(Vec3 start, Vec3 dir, double length_mm, double r_start, double r_end,
               double step_mm, double curvature, const Vec3& box, Rng& rng) {
  Tube tube;
  Vec3 p = start;
  Vec3 d = dir.normalized();
  const int steps = std::max(2, static_cast<int>(length_mm / step_mm));
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    const double r = r_start + (r_end - r_start) * t;
    tube.points.push_back(p);
    tube.radii.push_back(r);

    Vec3 jitter{rng.normal(), rng.normal(), rng.normal()};
    d = (d + jitter * (curvature * 0.15)).normalized();

    // steer away from the walls so the tube stays inside the box
    Vec3 center{box.z / 2, box.y / 2, box.x / 2};
    Vec3 next = p + d * step_mm;
    const double margin = r + step_mm;
    if (next.z < margin || next.z > box.z - margin || next.y < margin ||
        next.y > box.y - margin || next.x < margin || next.x > box.x - margin) {
      d = (d + (center - p).normalized() * 0.8).normalized();
      next = p + d * step_mm;
    }
    p = next;
  }
  return tube;
}

void stamp_tube(const Tube& tube, const PhantomSpec& spec, std::vector<uint8_t>& mask) {
  const auto& e = spec.extents;
  const auto& sp = spec.spacing;
  for (size_t i = 0; i < tube.points.size(); ++i) {
    const Vec3& p = tube.points[i];
    const double r = tube.radii[i];
    const int z0 = std::max(0, static_cast<int>(std::floor((p.z - r) / sp[0])));
    const int z1 = std::min(e[0] - 1, static_cast<int>(std::ceil((p.z + r) / sp[0])));
    const int y0 = std::max(0, static_cast<int>(std::floor((p.y - r) / sp[1])));
    const int y1 = std::min(e[1] - 1, static_cast<int>(std::ceil((p.y + r) / sp[1])));
    const int x0 = std::max(0, static_cast<int>(std::floor((p.x - r) / sp[2])));
    const int x1 = std::min(e[2] - 1, static_cast<int>(std::ceil((p.x + r) / sp[2])));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dz = z * sp[0] - p.z;
          const double dy = y * sp[1] - p.y;
          const double dx = x * sp[2] - p.x;
          if (dz * dz + dy * dy + dx * dx <= r * r)
            mask[(static_cast<int64_t>(z) * e[1] + y) * e[2] + x] = 1;
        }
  }
}

}  // namespace

void validate_phantom_spec(const PhantomSpec& spec) {
  Geometry g;
  g.extents = spec.extents;
  g.spacing = spec.spacing;
  validate_geometry(g);
  const double voxel = std::max({spec.spacing[0], spec.spacing[1], spec.spacing[2]});
  if (spec.radius_min_mm < voxel)
    fail(ErrorKind::kInvalidArgument,
         "phantom: radius_min_mm " + std::to_string(spec.radius_min_mm) +
             " must cover at least one voxel (largest spacing " + std::to_string(voxel) + " mm)");
  if (spec.radius_max_mm < spec.radius_min_mm)
    fail(ErrorKind::kInvalidArgument, "phantom: radius range is inverted");
  if (spec.branch_count < 1)
    fail(ErrorKind::kInvalidArgument, "phantom: branch_count must be >= 1");
  if (spec.noise_sigma < 0)
    fail(ErrorKind::kInvalidArgument, "phantom: noise_sigma must be >= 0");
}

Sample generate_phantom(const PhantomSpec& spec, PhantomTrace* trace) {
  validate_phantom_spec(spec);
  Rng rng(spec.seed);

  const Vec3 box{spec.extents[0] * spec.spacing[0], spec.extents[1] * spec.spacing[1],
                 spec.extents[2] * spec.spacing[2]};
  const double step = 0.4 * std::min({spec.spacing[0], spec.spacing[1], spec.spacing[2]});

  // trunk enters near the z-low face and runs the length of the volume
  Vec3 start{0.1 * box.z, box.y * rng.uniform(0.35, 0.65), box.x * rng.uniform(0.35, 0.65)};
  Vec3 dir{1.0, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  Tube trunk = walk_tube(start, dir, 0.8 * box.z, spec.radius_max_mm, spec.radius_min_mm, step,
                         spec.curvature, box, rng);

  std::vector<Tube> tubes{trunk};
  PhantomTrace local_trace;
  local_trace.tips_mm.push_back({trunk.points.back().z, trunk.points.back().y, trunk.points.back().x});

  const int extra_branches = spec.branch_count - 1;
  for (int b = 0; b < extra_branches; ++b) {
    const Tube& parent = tubes[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(tubes.size()) - 1))];
    const size_t at = static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(parent.points.size() / 4),
                        static_cast<int64_t>(3 * parent.points.size() / 4)));
    const Vec3 origin = parent.points[at];
    const double parent_r = parent.radii[at];

    // branch direction: parent tangent tilted by a random lateral component
    Vec3 tangent = (parent.points[std::min(at + 1, parent.points.size() - 1)] - parent.points[at - 1 > 0 ? at - 1 : 0]).normalized();
    Vec3 lateral{rng.normal(), rng.normal(), rng.normal()};
    Vec3 bdir = (tangent + lateral.normalized() * rng.uniform(0.6, 1.2)).normalized();

    const double child_r = std::max(spec.radius_min_mm, parent_r * 0.7);
    const double length = rng.uniform(0.25, 0.45) * box.z;
    Tube branch = walk_tube(origin, bdir, length, child_r, spec.radius_min_mm, step,
                            spec.curvature, box, rng);
    local_trace.tips_mm.push_back({branch.points.back().z, branch.points.back().y, branch.points.back().x});
    ++local_trace.branches_spawned;
    tubes.push_back(std::move(branch));
  }

  Sample sample;
  sample.id = "phantom-seed" + std::to_string(spec.seed);
  Geometry geom;
  geom.extents = spec.extents;
  geom.spacing = spec.spacing;
  sample.mask.geom = geom;
  sample.mask.values.assign(geom.voxel_count(), 0);
  for (const Tube& tube : tubes) stamp_tube(tube, spec, sample.mask.values);

  sample.volume.geom = geom;
  sample.volume.intensities.resize(geom.voxel_count());
  for (int64_t i = 0; i < geom.voxel_count(); ++i) {
    double v = sample.mask.values[i] ? spec.vessel_intensity : spec.background_intensity;
    if (spec.noise_sigma > 0) v += spec.noise_sigma * rng.normal();
    sample.volume.intensities[i] = v;
  }

  if (trace) *trace = local_trace;
  return sample;
}

}  // namespace agfa
