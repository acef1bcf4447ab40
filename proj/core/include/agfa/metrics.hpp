#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agfa/volume.hpp"

namespace agfa {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;
  int64_t total() const { return tp + fp + fn + tn; }
};

struct OverlapScores {
  double dice = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

// One prediction/truth evaluation. hausdorff_mm carries the labeled default
// variant (HD95); hausdorff100_mm is the classic percentile-100 distance.
// Hausdorff values are NaN when either mask is empty.
struct MetricsReport {
  double dice = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double hausdorff_mm = 0.0;
  double hausdorff100_mm = 0.0;
  std::string hausdorff_variant = "hd95";
  ConfusionCounts counts;
};

// Exact voxel counts; both masks must share geometry.
ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth);

// Dice = 2TP/((TP+FN)+(TP+FP)), Recall = TP/(TP+FN), Precision = TP/(TP+FP).
// A zero denominator yields 1 when both masks are empty and 0 otherwise.
OverlapScores overlap_metrics(const ConfusionCounts& counts);

// Symmetric boundary-to-boundary distance in mm. Boundary voxels are
// foreground voxels with a background (or out-of-bounds) 6-neighbor;
// distances are Euclidean between voxel centers under the grid spacing.
// percentile 100 gives the classic Hausdorff distance, 95 gives HD95
// (nearest-rank percentile of each directed distance set, then the max of
// the two directions). Errors if either mask is empty.
double hausdorff_distance(const LabelMask& a, const LabelMask& b, double percentile = 100.0);

// Boundary voxel flat indices under the 6-neighborhood surface definition.
std::vector<int64_t> boundary_voxels(const LabelMask& mask);

// Morphological closing (dilate then erode with a Chebyshev ball of the
// given radius; out-of-bounds counts as foreground during erosion so border
// blobs are preserved) followed by retention of the largest 26-connected
// component. Output is empty or a single component.
LabelMask postprocess(const LabelMask& pred, int closing_radius = 1);

LabelMask morphological_closing(const LabelMask& mask, int radius);
// Connected component labels (0 = background, 1..n = components) under
// 26-connectivity; returns the number of components.
int connected_components(const LabelMask& mask, std::vector<int32_t>& labels);
int count_components(const LabelMask& mask);

// Full report for one prediction/truth pair.
MetricsReport evaluate_prediction(const LabelMask& pred, const LabelMask& truth);

// Mean of the per-sample metrics; confusion counts are summed. NaN
// Hausdorff entries (empty masks) are excluded from their mean.
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

// key=value lines, one per field.
std::string report_to_text(const MetricsReport& report);
// Machine-readable JSON document with the same fields.
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_text(const std::string& text);

}  // namespace agfa
