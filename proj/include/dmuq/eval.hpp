#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmuq/detector.hpp"
#include "dmuq/geom.hpp"

namespace dmuq {

// Rotated-box intersection-over-union via convex polygon clipping.
// Inputs must be convex with positive area (any winding); symmetric.
double quad_iou(const Quad& a, const Quad& b);

// Convexity check used to screen decoded candidate boxes.
bool is_convex_quad(const Quad& q);

// One scored box inside a flat multi-frame detection list.
struct ScoredBox {
    int frame = 0;  // position of the frame within the split
    double score = 0.0;
    Quad corners;
};

struct LabeledBox {
    int frame = 0;
    Quad corners;
};

// Area under the precision-recall curve with all-point interpolation
// (precision envelope). Matching is greedy over the globally score-sorted
// detections; each ground truth matches at most once, at IoU >= threshold.
double average_precision(const std::vector<ScoredBox>& detections,
                         const std::vector<LabeledBox>& ground_truths, double iou_threshold);

// Greedy score-descending matching between one frame's detections and
// ground truths; returns (detection index, gt index) pairs.
std::vector<std::pair<int, int>> match_boxes(const std::vector<Detection>& detections,
                                             const std::vector<GroundTruthBox>& gts,
                                             double iou_threshold);

// Mean negative log-density of matched ground-truth corners under the
// detections' uncertainty (IMG per corner, ISG per dimension, DMG joint
// normalized by the corner count). Detections are matched per frame with
// the same greedy matcher.
double nll_score(const std::vector<std::vector<Detection>>& per_frame_detections,
                 const std::vector<Frame>& frames, double iou_threshold);

// One benchmark-grid row.
struct MetricRow {
    std::string mode;
    std::string uq_method;
    bool present = false;
    double ap50 = 0.0;
    double ap70 = 0.0;
    std::optional<double> nll50;
    std::optional<double> nll70;
    int n_det = 0;
    int n_gt = 0;
    double seconds = 0.0;  // kept at zero inside report files (no timestamps)
};

struct MetricReport {
    std::vector<MetricRow> rows;
};

// Report writers: human-readable table and one JSON record per line.
void write_report_text(const std::string& path, const MetricReport& report);
void write_report_jsonl(const std::string& path, const MetricReport& report);

}  // namespace dmuq
