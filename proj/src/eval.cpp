#include "dmuq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "dmuq/distributions.hpp"
#include "dmuq/error.hpp"

namespace dmuq {

namespace {

std::vector<Vec2> as_ccw_polygon(const Quad& q) {
    std::vector<Vec2> poly(q.begin(), q.end());
    const double area = signed_area(poly);
    if (std::abs(area) < 1e-12)
        raise(ErrorCategory::UndefinedGeometry, "degenerate box has (near-)zero area");
    if (area < 0.0) std::reverse(poly.begin(), poly.end());
    return poly;
}

}  // namespace

double quad_iou(const Quad& a, const Quad& b) {
    const auto pa = as_ccw_polygon(a);
    const auto pb = as_ccw_polygon(b);
    const auto inter = clip_convex(pa, pb);
    double inter_area = 0.0;
    if (inter.size() >= 3) inter_area = std::abs(signed_area(inter));
    const double union_area = signed_area(pa) + signed_area(pb) - inter_area;
    if (union_area <= 0.0)
        raise(ErrorCategory::UndefinedGeometry, "box union has non-positive area");
    return std::clamp(inter_area / union_area, 0.0, 1.0);
}

bool is_convex_quad(const Quad& q) {
    int sign = 0;
    for (int i = 0; i < 4; ++i) {
        const Vec2& p0 = q[static_cast<size_t>(i)];
        const Vec2& p1 = q[static_cast<size_t>((i + 1) % 4)];
        const Vec2& p2 = q[static_cast<size_t>((i + 2) % 4)];
        const double c = cross(p1 - p0, p2 - p1);
        if (c > 0.0) {
            if (sign < 0) return false;
            sign = 1;
        } else if (c < 0.0) {
            if (sign > 0) return false;
            sign = -1;
        } else {
            return false;  // collinear corners
        }
    }
    return true;
}

double average_precision(const std::vector<ScoredBox>& detections,
                         const std::vector<LabeledBox>& ground_truths, double iou_threshold) {
    if (ground_truths.empty())
        raise(ErrorCategory::UndefinedMetric, "average precision needs at least one ground truth");

    // Ground truths grouped by frame, with per-box matched flags.
    std::map<int, std::vector<int>> gts_by_frame;
    for (size_t g = 0; g < ground_truths.size(); ++g)
        gts_by_frame[ground_truths[g].frame].push_back(static_cast<int>(g));
    std::vector<bool> gt_matched(ground_truths.size(), false);

    // Global order: score descending, then frame, then list position.
    std::vector<size_t> order(detections.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        if (detections[i].score != detections[j].score)
            return detections[i].score > detections[j].score;
        if (detections[i].frame != detections[j].frame)
            return detections[i].frame < detections[j].frame;
        return i < j;
    });

    std::vector<double> precision, recall;
    precision.reserve(order.size());
    recall.reserve(order.size());
    const double n_gt = static_cast<double>(ground_truths.size());
    int tp = 0, fp = 0;
    for (size_t rank : order) {
        const ScoredBox& det = detections[rank];
        int best_gt = -1;
        double best_iou = 0.0;
        const auto it = gts_by_frame.find(det.frame);
        if (it != gts_by_frame.end()) {
            for (int g : it->second) {
                if (gt_matched[static_cast<size_t>(g)]) continue;
                const double iou =
                    quad_iou(det.corners, ground_truths[static_cast<size_t>(g)].corners);
                if (iou > best_iou) {
                    best_iou = iou;
                    best_gt = g;
                }
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            gt_matched[static_cast<size_t>(best_gt)] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }

    // All-point interpolation: running max of precision from the right.
    for (size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

std::vector<std::pair<int, int>> match_boxes(const std::vector<Detection>& detections,
                                             const std::vector<GroundTruthBox>& gts,
                                             double iou_threshold) {
    std::vector<size_t> order(detections.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        if (detections[i].score != detections[j].score)
            return detections[i].score > detections[j].score;
        return i < j;
    });

    std::vector<bool> gt_matched(gts.size(), false);
    std::vector<std::pair<int, int>> pairs;
    for (size_t di : order) {
        int best_gt = -1;
        double best_iou = 0.0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_matched[g]) continue;
            const double iou = quad_iou(detections[di].corners, gts[g].corners);
            if (iou > best_iou) {
                best_iou = iou;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            gt_matched[static_cast<size_t>(best_gt)] = true;
            pairs.emplace_back(static_cast<int>(di), best_gt);
        }
    }
    return pairs;
}

double nll_score(const std::vector<std::vector<Detection>>& per_frame_detections,
                 const std::vector<Frame>& frames, double iou_threshold) {
    if (per_frame_detections.size() != frames.size())
        raise(ErrorCategory::Usage, "nll_score: detection list and frame list differ in length");

    double total = 0.0;
    int count = 0;  // one unit per matched corner
    for (size_t f = 0; f < frames.size(); ++f) {
        const auto& dets = per_frame_detections[f];
        const auto pairs = match_boxes(dets, frames[f].boxes, iou_threshold);
        for (const auto& [di, gi] : pairs) {
            const Detection& det = dets[static_cast<size_t>(di)];
            const GroundTruthBox& gt = frames[f].boxes[static_cast<size_t>(gi)];
            // Same geometric corner pairing the detector was trained with:
            // the cyclic rotation of the labeled quad closest to the
            // detection's corners.
            const Quad gt_corners =
                align_corner_order(canonical_corners(gt.corners), det.corners);
            switch (det.uncertainty.variant) {
                case CovVariant::IMG:
                    for (int i = 0; i < kCorners; ++i) {
                        const Vec2& y = gt_corners[static_cast<size_t>(i)];
                        total -= log_pdf(det.uncertainty.corners[static_cast<size_t>(i)],
                                         {y.x, y.y});
                        ++count;
                    }
                    break;
                case CovVariant::ISG:
                    for (int i = 0; i < kCorners; ++i) {
                        const Vec2& y = gt_corners[static_cast<size_t>(i)];
                        const Vec2& m = det.corners[static_cast<size_t>(i)];
                        const double e[2] = {y.x - m.x, y.y - m.y};
                        for (int d = 0; d < kBevDim; ++d) {
                            const double v =
                                det.uncertainty.variances[static_cast<size_t>(kBevDim * i + d)];
                            if (!(v > 0.0))
                                raise(ErrorCategory::InvalidParameter,
                                      "nll_score: non-positive variance");
                            total += 0.5 * std::log(2.0 * std::numbers::pi * v) +
                                     e[d] * e[d] / (2.0 * v);
                        }
                        ++count;
                    }
                    break;
                case CovVariant::DMG: {
                    CornerGaussian joint;
                    joint.mean = det.uncertainty.joint_mean;
                    joint.cov = det.uncertainty.joint_cov;
                    std::vector<double> y;
                    y.reserve(static_cast<size_t>(kCorners) * kBevDim);
                    for (int i = 0; i < kCorners; ++i) {
                        y.push_back(gt_corners[static_cast<size_t>(i)].x);
                        y.push_back(gt_corners[static_cast<size_t>(i)].y);
                    }
                    total -= log_pdf(joint, y);
                    count += kCorners;
                    break;
                }
                case CovVariant::None:
                    raise(ErrorCategory::UndefinedMetric,
                          "nll_score: detections carry no uncertainty");
            }
        }
    }
    if (count == 0)
        raise(ErrorCategory::UndefinedMetric, "nll_score: no detection matched a ground truth");
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

void write_report_text(const std::string& path, const MetricReport& report) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    std::fprintf(f, "# detection benchmark (AP: all-point interpolation; NLL: mean per corner)\n");
    std::fprintf(f, "%-7s %-12s %10s %10s %10s %10s %7s %7s %9s\n", "mode", "uq_method", "ap50",
                 "ap70", "nll50", "nll70", "n_det", "n_gt", "seconds");
    for (const auto& row : report.rows) {
        if (!row.present) {
            std::fprintf(f, "%-7s %-12s (missing)\n", row.mode.c_str(), row.uq_method.c_str());
            continue;
        }
        char nll50[32], nll70[32];
        if (row.nll50)
            std::snprintf(nll50, sizeof nll50, "%10.6f", *row.nll50);
        else
            std::snprintf(nll50, sizeof nll50, "%10s", "-");
        if (row.nll70)
            std::snprintf(nll70, sizeof nll70, "%10.6f", *row.nll70);
        else
            std::snprintf(nll70, sizeof nll70, "%10s", "-");
        std::fprintf(f, "%-7s %-12s %10.6f %10.6f %s %s %7d %7d %9.6f\n", row.mode.c_str(),
                     row.uq_method.c_str(), row.ap50, row.ap70, nll50, nll70, row.n_det, row.n_gt,
                     row.seconds);
    }
    if (std::fclose(f) != 0) raise(ErrorCategory::Io, "failed to write '" + path + "'");
}

void write_report_jsonl(const std::string& path, const MetricReport& report) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    for (const auto& row : report.rows) {
        if (!row.present) continue;
        nlohmann::ordered_json j;
        j["mode"] = row.mode;
        j["uq_method"] = row.uq_method;
        j["ap50"] = row.ap50;
        j["ap70"] = row.ap70;
        j["nll50"] = row.nll50 ? nlohmann::ordered_json(*row.nll50) : nlohmann::ordered_json();
        j["nll70"] = row.nll70 ? nlohmann::ordered_json(*row.nll70) : nlohmann::ordered_json();
        j["n_det"] = row.n_det;
        j["n_gt"] = row.n_gt;
        j["seconds"] = row.seconds;
        const std::string line = j.dump();
        std::fprintf(f, "%s\n", line.c_str());
    }
    if (std::fclose(f) != 0) raise(ErrorCategory::Io, "failed to write '" + path + "'");
}

}  // namespace dmuq
