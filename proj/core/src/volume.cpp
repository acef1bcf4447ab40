#include "agfa/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "agfa/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "volume container assumes a little-endian host");

namespace agfa {

namespace fs = std::filesystem;

void validate_geometry(const Geometry& geom) {
  for (int a = 0; a < 3; ++a) {
    if (geom.extents[a] <= 0)
      fail(ErrorKind::kInvalidArgument, "geometry: extent on axis " + std::to_string(a) + " must be positive");
    if (!(geom.spacing[a] > 0.0) || geom.spacing[a] > 10.0)
      fail(ErrorKind::kInvalidArgument, "geometry: spacing on axis " + std::to_string(a) + " must be in (0, 10] mm");
  }
}

int64_t LabelMask::foreground_count() const {
  int64_t n = 0;
  for (uint8_t v : values) n += v;
  return n;
}

void validate_sample(const Sample& sample) {
  validate_geometry(sample.volume.geom);
  if (!(sample.volume.geom == sample.mask.geom))
    fail(ErrorKind::kShapeMismatch, "sample '" + sample.id + "': volume and mask geometry differ");
  if (static_cast<int64_t>(sample.volume.intensities.size()) != sample.volume.geom.voxel_count())
    fail(ErrorKind::kShapeMismatch, "sample '" + sample.id + "': intensity count mismatch");
  if (static_cast<int64_t>(sample.mask.values.size()) != sample.mask.geom.voxel_count())
    fail(ErrorKind::kShapeMismatch, "sample '" + sample.id + "': mask value count mismatch");
}

// ---------------------------------------------------------------------------
// .agv container

namespace {

std::string fmt_g17(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_header(std::ostream& os, const Geometry& g, const char* dtype) {
  os << "AGVOL1\n";
  os << "extents " << g.extents[0] << " " << g.extents[1] << " " << g.extents[2] << "\n";
  os << "spacing " << fmt_g17(g.spacing[0]) << " " << fmt_g17(g.spacing[1]) << " "
     << fmt_g17(g.spacing[2]) << "\n";
  os << "origin " << fmt_g17(g.origin[0]) << " " << fmt_g17(g.origin[1]) << " "
     << fmt_g17(g.origin[2]) << "\n";
  os << "dtype " << dtype << "\n";
  os << "data\n";
}

struct ParsedHeader {
  Geometry geom;
  std::string dtype;
};

std::string read_line(std::istream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line))
    fail(ErrorKind::kMalformedHeader, path + ": header ends unexpectedly");
  return line;
}

ParsedHeader read_header(std::istream& is, const std::string& path) {
  std::string magic = read_line(is, path);
  if (magic.rfind("AGVOL", 0) != 0)
    fail(ErrorKind::kMalformedHeader, path + ": not a volume container (bad magic)");
  if (magic != "AGVOL1")
    fail(ErrorKind::kUnsupportedVersion, path + ": container version '" + magic + "'");

  ParsedHeader h;
  bool got_extents = false, got_dtype = false;
  for (;;) {
    std::string line = read_line(is, path);
    if (line == "data") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "extents") {
      ls >> h.geom.extents[0] >> h.geom.extents[1] >> h.geom.extents[2];
      got_extents = true;
    } else if (key == "spacing") {
      ls >> h.geom.spacing[0] >> h.geom.spacing[1] >> h.geom.spacing[2];
    } else if (key == "origin") {
      ls >> h.geom.origin[0] >> h.geom.origin[1] >> h.geom.origin[2];
    } else if (key == "dtype") {
      ls >> h.dtype;
      got_dtype = true;
    } else {
      fail(ErrorKind::kMalformedHeader, path + ": unknown header field '" + key + "'");
    }
    if (!ls) fail(ErrorKind::kMalformedHeader, path + ": cannot parse header field '" + key + "'");
  }
  if (!got_extents || !got_dtype)
    fail(ErrorKind::kMalformedHeader, path + ": header missing extents or dtype");
  validate_geometry(h.geom);
  return h;
}

}  // namespace

void save_volume(const std::string& path, const Volume& volume) {
  validate_geometry(volume.geom);
  if (static_cast<int64_t>(volume.intensities.size()) != volume.geom.voxel_count())
    fail(ErrorKind::kShapeMismatch, "save_volume: intensity count does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  write_header(os, volume.geom, "f64");
  os.write(reinterpret_cast<const char*>(volume.intensities.data()),
           static_cast<std::streamsize>(volume.intensities.size() * 8));
  if (!os) fail(ErrorKind::kIo, "write failed: " + path);
}

Volume load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  ParsedHeader h = read_header(is, path);
  Volume v;
  v.geom = h.geom;
  const int64_t n = h.geom.voxel_count();
  if (h.dtype == "f64") {
    v.intensities.resize(n);
    if (!is.read(reinterpret_cast<char*>(v.intensities.data()), n * 8))
      fail(ErrorKind::kTruncatedPayload, path + ": payload shorter than extents promise");
  } else if (h.dtype == "u8") {
    std::vector<uint8_t> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()), n))
      fail(ErrorKind::kTruncatedPayload, path + ": payload shorter than extents promise");
    v.intensities.assign(raw.begin(), raw.end());
  } else {
    fail(ErrorKind::kMalformedHeader, path + ": unknown dtype '" + h.dtype + "'");
  }
  return v;
}

void save_mask(const std::string& path, const LabelMask& mask) {
  validate_geometry(mask.geom);
  if (static_cast<int64_t>(mask.values.size()) != mask.geom.voxel_count())
    fail(ErrorKind::kShapeMismatch, "save_mask: value count does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  write_header(os, mask.geom, "u8");
  os.write(reinterpret_cast<const char*>(mask.values.data()),
           static_cast<std::streamsize>(mask.values.size()));
  if (!os) fail(ErrorKind::kIo, "write failed: " + path);
}

LabelMask load_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  ParsedHeader h = read_header(is, path);
  if (h.dtype != "u8")
    fail(ErrorKind::kMalformedHeader, path + ": mask requires dtype u8, found '" + h.dtype + "'");
  LabelMask m;
  m.geom = h.geom;
  const int64_t n = h.geom.voxel_count();
  m.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(m.values.data()), n))
    fail(ErrorKind::kTruncatedPayload, path + ": payload shorter than extents promise");
  for (uint8_t v : m.values)
    if (v > 1) fail(ErrorKind::kMalformedHeader, path + ": mask contains non-binary value");
  return m;
}

// ---------------------------------------------------------------------------
// NRRD import

Volume import_nrrd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  std::string magic = read_line(is, path);
  if (magic.rfind("NRRD", 0) != 0)
    fail(ErrorKind::kMalformedHeader, path + ": not an NRRD file");

  int dimension = 0;
  std::array<int, 3> sizes{0, 0, 0};        // NRRD order: fastest axis first
  std::array<double, 3> spacings{1, 1, 1};  // same order
  std::string type, encoding = "raw", endianness = "little";

  for (;;) {
    std::string line = read_line(is, path);
    if (line.empty() || line == "\r") break;  // blank line ends the header
    if (line[0] == '#') continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      fail(ErrorKind::kMalformedHeader, path + ": malformed NRRD field '" + line + "'");
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value[0] == '=') continue;  // key:=value comments
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    while (!value.empty() && (value.back() == '\r' || value.back() == ' ')) value.pop_back();

    if (key == "dimension") {
      dimension = std::stoi(value);
    } else if (key == "sizes") {
      std::istringstream vs(value);
      vs >> sizes[0] >> sizes[1] >> sizes[2];
      if (!vs) fail(ErrorKind::kMalformedHeader, path + ": cannot parse sizes");
    } else if (key == "spacings") {
      std::istringstream vs(value);
      vs >> spacings[0] >> spacings[1] >> spacings[2];
      if (!vs) fail(ErrorKind::kMalformedHeader, path + ": cannot parse spacings");
    } else if (key == "type") {
      type = value;
    } else if (key == "encoding") {
      encoding = value;
    } else if (key == "endian") {
      endianness = value;
    } else if (key == "data file") {
      fail(ErrorKind::kUnsupportedVersion, path + ": detached NRRD data files are not supported");
    }
    // other fields (space, kinds, ...) carry no grid data we need
  }

  if (dimension != 3)
    fail(ErrorKind::kUnsupportedVersion, path + ": only 3-d NRRD volumes are supported");
  if (encoding != "raw")
    fail(ErrorKind::kUnsupportedVersion, path + ": only raw NRRD encoding is supported");
  if (endianness != "little")
    fail(ErrorKind::kUnsupportedVersion, path + ": only little-endian NRRD payloads are supported");
  for (int a = 0; a < 3; ++a)
    if (sizes[a] <= 0) fail(ErrorKind::kMalformedHeader, path + ": NRRD sizes missing or invalid");

  // NRRD lists the fastest-moving axis first; our layout is (D,H,W) with W
  // fastest, so the axis order reverses.
  Volume v;
  v.geom.extents = {sizes[2], sizes[1], sizes[0]};
  v.geom.spacing = {spacings[2], spacings[1], spacings[0]};
  validate_geometry(v.geom);
  const int64_t n = v.geom.voxel_count();
  v.intensities.resize(n);

  auto read_as = [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> raw(n);
    if (!is.read(reinterpret_cast<char*>(raw.data()), n * static_cast<int64_t>(sizeof(T))))
      fail(ErrorKind::kTruncatedPayload, path + ": NRRD payload shorter than sizes promise");
    for (int64_t i = 0; i < n; ++i) v.intensities[i] = static_cast<double>(raw[i]);
  };

  if (type == "uchar" || type == "unsigned char" || type == "uint8" || type == "uint8_t")
    read_as(uint8_t{});
  else if (type == "short" || type == "int16" || type == "int16_t")
    read_as(int16_t{});
  else if (type == "ushort" || type == "uint16" || type == "uint16_t")
    read_as(uint16_t{});
  else if (type == "int" || type == "int32" || type == "int32_t")
    read_as(int32_t{});
  else if (type == "float")
    read_as(float{});
  else if (type == "double")
    read_as(double{});
  else
    fail(ErrorKind::kUnsupportedVersion, path + ": unsupported NRRD type '" + type + "'");
  return v;
}

// ---------------------------------------------------------------------------
// normalize

Volume normalize(const Volume& volume, const NormalizeOptions& opts) {
  Volume out;
  out.geom = volume.geom;
  out.intensities.resize(volume.intensities.size());
  double lo = opts.window_lo, hi = opts.window_hi;
  if (opts.auto_window) {
    lo = 1e300;
    hi = -1e300;
    for (double v : volume.intensities) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    std::fill(out.intensities.begin(), out.intensities.end(), 0.0);
    return out;
  }
  const double scale = 1.0 / (hi - lo);
  for (size_t i = 0; i < volume.intensities.size(); ++i) {
    double v = std::min(std::max(volume.intensities[i], lo), hi);
    out.intensities[i] = (v - lo) * scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// manifest

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json doc;
  doc["samples"] = nlohmann::json::array();
  for (const auto& e : entries) {
    doc["samples"].push_back({{"id", e.id}, {"volume", e.volume_path}, {"mask", e.mask_path}});
  }
  std::ofstream os(path);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  os << doc.dump(2) << "\n";
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformedHeader, path + ": invalid manifest json (" + std::string(e.what()) + ")");
  }
  if (!doc.contains("samples") || !doc["samples"].is_array())
    fail(ErrorKind::kMalformedHeader, path + ": manifest lacks a 'samples' array");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  for (const auto& s : doc["samples"]) {
    ManifestEntry e;
    try {
      e.id = s.at("id").get<std::string>();
      e.volume_path = (base / s.at("volume").get<std::string>()).string();
      e.mask_path = (base / s.at("mask").get<std::string>()).string();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kMalformedHeader, path + ": manifest entry missing id/volume/mask");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<Sample> load_samples(const std::string& manifest_path) {
  std::vector<Sample> samples;
  for (const auto& e : read_manifest(manifest_path)) {
    Sample s;
    s.id = e.id;
    s.volume = load_volume(e.volume_path);
    s.mask = load_mask(e.mask_path);
    validate_sample(s);
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// tensor bridges

Tensor volume_to_tensor(const Volume& volume) {
  const auto& e = volume.geom.extents;
  return Tensor::from_values({1, e[0], e[1], e[2]}, volume.intensities);
}

Tensor mask_to_tensor(const LabelMask& mask) {
  const auto& e = mask.geom.extents;
  std::vector<double> v(mask.values.begin(), mask.values.end());
  return Tensor::from_values({1, e[0], e[1], e[2]}, std::move(v));
}

LabelMask tensor_to_mask(const Tensor& probabilities, const Geometry& geom, double threshold) {
  if (probabilities.size() != geom.voxel_count())
    fail(ErrorKind::kShapeMismatch, "tensor_to_mask: element count does not match geometry");
  LabelMask m;
  m.geom = geom;
  m.values.resize(probabilities.size());
  const auto& v = probabilities.values();
  for (size_t i = 0; i < v.size(); ++i) m.values[i] = v[i] > threshold ? 1 : 0;
  return m;
}

}  // namespace agfa
