#include "agfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "agfa/error.hpp"

namespace agfa {

namespace {

void require_same_geometry(const LabelMask& a, const LabelMask& b, const char* what) {
  if (!(a.geom == b.geom))
    fail(ErrorKind::kShapeMismatch, std::string(what) + ": mask geometries differ");
}

inline int64_t flat_index(int z, int y, int x, const std::array<int, 3>& e) {
  return (static_cast<int64_t>(z) * e[1] + y) * e[2] + x;
}

}  // namespace

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth) {
  require_same_geometry(pred, truth, "confusion");
  ConfusionCounts c;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0;
    const bool g = truth.values[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

OverlapScores overlap_metrics(const ConfusionCounts& c) {
  OverlapScores s;
  const bool both_empty = c.tp == 0 && c.fp == 0 && c.fn == 0;
  auto ratio = [both_empty](double num, double den) {
    if (den > 0.0) return num / den;
    return both_empty ? 1.0 : 0.0;
  };
  s.dice = ratio(2.0 * static_cast<double>(c.tp),
                 static_cast<double>(c.tp + c.fn) + static_cast<double>(c.tp + c.fp));
  s.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  s.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  return s;
}

// ---------------------------------------------------------------------------
// Hausdorff

std::vector<int64_t> boundary_voxels(const LabelMask& mask) {
  const auto& e = mask.geom.extents;
  std::vector<int64_t> out;
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x) {
        const int64_t i = flat_index(z, y, x, e);
        if (!mask.values[i]) continue;
        bool boundary = z == 0 || z == e[0] - 1 || y == 0 || y == e[1] - 1 || x == 0 ||
                        x == e[2] - 1;
        if (!boundary) {
          boundary = !mask.values[flat_index(z - 1, y, x, e)] ||
                     !mask.values[flat_index(z + 1, y, x, e)] ||
                     !mask.values[flat_index(z, y - 1, x, e)] ||
                     !mask.values[flat_index(z, y + 1, x, e)] ||
                     !mask.values[flat_index(z, y, x - 1, e)] ||
                     !mask.values[flat_index(z, y, x + 1, e)];
        }
        if (boundary) out.push_back(i);
      }
  return out;
}

namespace {

struct Point3 {
  double z, y, x;
};

std::vector<Point3> boundary_points_mm(const LabelMask& mask) {
  const auto& e = mask.geom.extents;
  const auto& sp = mask.geom.spacing;
  std::vector<Point3> pts;
  for (int64_t i : boundary_voxels(mask)) {
    const int z = static_cast<int>(i / (static_cast<int64_t>(e[1]) * e[2]));
    const int y = static_cast<int>((i / e[2]) % e[1]);
    const int x = static_cast<int>(i % e[2]);
    pts.push_back({z * sp[0], y * sp[1], x * sp[2]});
  }
  return pts;
}

// Directed distance set percentile, nearest-rank on the sorted minima.
double directed_percentile(const std::vector<Point3>& from, const std::vector<Point3>& to,
                           double percentile) {
  std::vector<double> mins;
  mins.reserve(from.size());
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    mins.push_back(std::sqrt(best));
  }
  std::sort(mins.begin(), mins.end());
  size_t rank = static_cast<size_t>(std::ceil(percentile / 100.0 * static_cast<double>(mins.size())));
  if (rank == 0) rank = 1;
  if (rank > mins.size()) rank = mins.size();
  return mins[rank - 1];
}

}  // namespace

double hausdorff_distance(const LabelMask& a, const LabelMask& b, double percentile) {
  require_same_geometry(a, b, "hausdorff_distance");
  if (percentile <= 0.0 || percentile > 100.0)
    fail(ErrorKind::kInvalidArgument, "hausdorff_distance: percentile must be in (0, 100]");
  auto pa = boundary_points_mm(a);
  auto pb = boundary_points_mm(b);
  if (pa.empty() || pb.empty())
    fail(ErrorKind::kInvalidArgument, "hausdorff_distance: undefined for an empty mask");
  return std::max(directed_percentile(pa, pb, percentile), directed_percentile(pb, pa, percentile));
}

// ---------------------------------------------------------------------------
// morphology

namespace {

// Dilation/erosion with a Chebyshev ball (the (2r+1)^3 cube; its radius-1
// form is the 26-neighborhood). Cells outside the grid are background.
std::vector<uint8_t> morph_pass(const std::vector<uint8_t>& in, const std::array<int, 3>& e,
                                int radius, bool dilate) {
  std::vector<uint8_t> out(in.size(), 0);
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x) {
        bool hit = !dilate;
        for (int dz = -radius; dz <= radius && (dilate ? !hit : hit); ++dz)
          for (int dy = -radius; dy <= radius && (dilate ? !hit : hit); ++dy)
            for (int dx = -radius; dx <= radius && (dilate ? !hit : hit); ++dx) {
              const int zz = z + dz, yy = y + dy, xx = x + dx;
              bool v = false;
              if (zz >= 0 && zz < e[0] && yy >= 0 && yy < e[1] && xx >= 0 && xx < e[2])
                v = in[flat_index(zz, yy, xx, e)] != 0;
              if (dilate && v) hit = true;
              if (!dilate && !v) hit = false;
            }
        out[flat_index(z, y, x, e)] = hit ? 1 : 0;
      }
  return out;
}

}  // namespace

LabelMask morphological_closing(const LabelMask& mask, int radius) {
  if (radius < 0) fail(ErrorKind::kInvalidArgument, "closing: radius must be >= 0");
  if (radius == 0) return mask;
  // Work on a grid padded by the radius: this reproduces the unbounded-
  // domain closing exactly, so blobs touching the volume border are
  // preserved instead of being inflated or eroded by edge effects.
  const auto& e = mask.geom.extents;
  const std::array<int, 3> pe{e[0] + 2 * radius, e[1] + 2 * radius, e[2] + 2 * radius};
  std::vector<uint8_t> padded(static_cast<size_t>(pe[0]) * pe[1] * pe[2], 0);
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x)
        padded[flat_index(z + radius, y + radius, x + radius, pe)] =
            mask.values[flat_index(z, y, x, e)];
  std::vector<uint8_t> closed =
      morph_pass(morph_pass(padded, pe, radius, /*dilate=*/true), pe, radius, /*dilate=*/false);
  LabelMask out;
  out.geom = mask.geom;
  out.values.assign(mask.values.size(), 0);
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x)
        out.values[flat_index(z, y, x, e)] =
            closed[flat_index(z + radius, y + radius, x + radius, pe)];
  return out;
}

int connected_components(const LabelMask& mask, std::vector<int32_t>& labels) {
  const auto& e = mask.geom.extents;
  labels.assign(mask.values.size(), 0);
  int next_label = 0;
  std::vector<int64_t> stack;
  for (int64_t seed = 0; seed < static_cast<int64_t>(mask.values.size()); ++seed) {
    if (!mask.values[seed] || labels[seed]) continue;
    ++next_label;
    stack.push_back(seed);
    labels[seed] = next_label;
    while (!stack.empty()) {
      const int64_t i = stack.back();
      stack.pop_back();
      const int z = static_cast<int>(i / (static_cast<int64_t>(e[1]) * e[2]));
      const int y = static_cast<int>((i / e[2]) % e[1]);
      const int x = static_cast<int>(i % e[2]);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dz && !dy && !dx) continue;
            const int zz = z + dz, yy = y + dy, xx = x + dx;
            if (zz < 0 || zz >= e[0] || yy < 0 || yy >= e[1] || xx < 0 || xx >= e[2]) continue;
            const int64_t j = flat_index(zz, yy, xx, e);
            if (mask.values[j] && !labels[j]) {
              labels[j] = next_label;
              stack.push_back(j);
            }
          }
    }
  }
  return next_label;
}

int count_components(const LabelMask& mask) {
  std::vector<int32_t> labels;
  return connected_components(mask, labels);
}

LabelMask postprocess(const LabelMask& pred, int closing_radius) {
  LabelMask closed = morphological_closing(pred, closing_radius);
  std::vector<int32_t> labels;
  const int n = connected_components(closed, labels);
  if (n <= 1) return closed;
  std::vector<int64_t> sizes(n + 1, 0);
  for (int32_t l : labels) ++sizes[l];
  sizes[0] = 0;
  // ties resolve to the earliest label, i.e. first component in scan order
  int best = 1;
  for (int l = 2; l <= n; ++l)
    if (sizes[l] > sizes[best]) best = l;
  LabelMask out;
  out.geom = closed.geom;
  out.values.assign(closed.values.size(), 0);
  for (size_t i = 0; i < labels.size(); ++i) out.values[i] = labels[i] == best ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// reports

MetricsReport evaluate_prediction(const LabelMask& pred, const LabelMask& truth) {
  MetricsReport r;
  r.counts = confusion(pred, truth);
  OverlapScores s = overlap_metrics(r.counts);
  r.dice = s.dice;
  r.recall = s.recall;
  r.precision = s.precision;
  const bool pred_empty = pred.foreground_count() == 0;
  const bool truth_empty = truth.foreground_count() == 0;
  if (pred_empty || truth_empty) {
    r.hausdorff_mm = std::numeric_limits<double>::quiet_NaN();
    r.hausdorff100_mm = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.hausdorff_mm = hausdorff_distance(pred, truth, 95.0);
    r.hausdorff100_mm = hausdorff_distance(pred, truth, 100.0);
  }
  return r;
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) fail(ErrorKind::kInvalidArgument, "aggregate_reports: no reports");
  MetricsReport agg;
  int hd_n = 0, hd100_n = 0;
  double hd_sum = 0.0, hd100_sum = 0.0;
  for (const auto& r : reports) {
    agg.dice += r.dice;
    agg.recall += r.recall;
    agg.precision += r.precision;
    agg.counts.tp += r.counts.tp;
    agg.counts.fp += r.counts.fp;
    agg.counts.fn += r.counts.fn;
    agg.counts.tn += r.counts.tn;
    if (!std::isnan(r.hausdorff_mm)) {
      hd_sum += r.hausdorff_mm;
      ++hd_n;
    }
    if (!std::isnan(r.hausdorff100_mm)) {
      hd100_sum += r.hausdorff100_mm;
      ++hd100_n;
    }
  }
  const double n = static_cast<double>(reports.size());
  agg.dice /= n;
  agg.recall /= n;
  agg.precision /= n;
  agg.hausdorff_mm = hd_n ? hd_sum / hd_n : std::numeric_limits<double>::quiet_NaN();
  agg.hausdorff100_mm = hd100_n ? hd100_sum / hd100_n : std::numeric_limits<double>::quiet_NaN();
  return agg;
}

std::string report_to_text(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "dice=" << r.dice << "\n";
  os << "recall=" << r.recall << "\n";
  os << "precision=" << r.precision << "\n";
  os << "hausdorff_mm=" << r.hausdorff_mm << "\n";
  os << "hausdorff_variant=" << r.hausdorff_variant << "\n";
  os << "hausdorff100_mm=" << r.hausdorff100_mm << "\n";
  os << "tp=" << r.counts.tp << "\n";
  os << "fp=" << r.counts.fp << "\n";
  os << "fn=" << r.counts.fn << "\n";
  os << "tn=" << r.counts.tn << "\n";
  return os.str();
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json doc;
  doc["dice"] = r.dice;
  doc["recall"] = r.recall;
  doc["precision"] = r.precision;
  if (std::isnan(r.hausdorff_mm)) {
    doc["hausdorff_mm"] = nullptr;
    doc["hausdorff100_mm"] = nullptr;
  } else {
    doc["hausdorff_mm"] = r.hausdorff_mm;
    doc["hausdorff100_mm"] = r.hausdorff100_mm;
  }
  doc["hausdorff_variant"] = r.hausdorff_variant;
  doc["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}};
  return doc.dump(2);
}

MetricsReport report_from_text(const std::string& text) {
  MetricsReport r;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "dice")
      r.dice = std::stod(value);
    else if (key == "recall")
      r.recall = std::stod(value);
    else if (key == "precision")
      r.precision = std::stod(value);
    else if (key == "hausdorff_mm")
      r.hausdorff_mm = std::stod(value);
    else if (key == "hausdorff_variant")
      r.hausdorff_variant = value;
    else if (key == "hausdorff100_mm")
      r.hausdorff100_mm = std::stod(value);
    else if (key == "tp")
      r.counts.tp = std::stoll(value);
    else if (key == "fp")
      r.counts.fp = std::stoll(value);
    else if (key == "fn")
      r.counts.fn = std::stoll(value);
    else if (key == "tn")
      r.counts.tn = std::stoll(value);
  }
  return r;
}

}  // namespace agfa
