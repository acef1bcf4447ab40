#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "agfa/tensor.hpp"

namespace agfa {

// Axis order is (D,H,W): axial slices first, then rows, then columns.
// Spacing is mm per axis and must lie in (0, 10]; the width axis W is the
// "horizontal" axis for flips.
struct Geometry {
  std::array<int, 3> extents{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  int64_t voxel_count() const {
    return static_cast<int64_t>(extents[0]) * extents[1] * extents[2];
  }
  bool operator==(const Geometry&) const = default;
};

void validate_geometry(const Geometry& geom);

// 3D scalar intensity grid; the CCTA stand-in.
struct Volume {
  Geometry geom;
  std::vector<double> intensities;  // row-major (D,H,W)
};

// Binary grid aligned to a Volume.
struct LabelMask {
  Geometry geom;
  std::vector<uint8_t> values;  // each 0 or 1

  int64_t foreground_count() const;
};

struct Sample {
  Volume volume;
  LabelMask mask;
  std::string id;
};

// Requires identical geometry between a volume and its mask.
void validate_sample(const Sample& sample);

// ---------------------------------------------------------------------------
// Container file format (.agv): a self-describing text header followed by a
// little-endian raw payload.
//
//   AGVOL1\n
//   extents <D> <H> <W>\n
//   spacing <sd> <sh> <sw>\n        (printed with 17 significant digits)
//   origin <od> <oh> <ow>\n
//   dtype f64|u8\n
//   data\n
//   <payload bytes>
//
// f64 payloads hold volumes, u8 payloads hold {0,1} masks. Round trips are
// bit-exact in both directions.

void save_volume(const std::string& path, const Volume& volume);
Volume load_volume(const std::string& path);  // accepts f64 or u8 payloads

void save_mask(const std::string& path, const LabelMask& mask);
LabelMask load_mask(const std::string& path);  // requires a u8 payload of {0,1}

// Minimal import of a common research volume format (NRRD): 3-d, raw
// encoding, little endian, types uchar/short/ushort/int/float/double,
// `sizes` and optional `spacings`/`origin`. Anything else is rejected.
Volume import_nrrd(const std::string& path);

// Clamp to [window_lo, window_hi] then rescale to [0,1]. A degenerate
// window (all intensities equal) maps to all zeros. The default window is
// the volume's own min/max.
struct NormalizeOptions {
  bool auto_window = true;
  double window_lo = 0.0;
  double window_hi = 1.0;
};
Volume normalize(const Volume& volume, const NormalizeOptions& opts = {});

// ---------------------------------------------------------------------------
// Dataset manifest: a JSON document listing sample ids and the volume/mask
// file paths, relative to the manifest's directory.

struct ManifestEntry {
  std::string id;
  std::string volume_path;  // resolved to absolute on load
  std::string mask_path;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::vector<Sample> load_samples(const std::string& manifest_path);

// Conversions to/from the tensor layer ([1,D,H,W] single-channel maps).
Tensor volume_to_tensor(const Volume& volume);
Tensor mask_to_tensor(const LabelMask& mask);
LabelMask tensor_to_mask(const Tensor& probabilities, const Geometry& geom, double threshold);

}  // namespace agfa
