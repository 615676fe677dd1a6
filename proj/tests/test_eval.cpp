#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dmuq/distributions.hpp"
#include "dmuq/error.hpp"
#include "dmuq/eval.hpp"
#include "dmuq/geom.hpp"
#include "dmuq/matrix.hpp"
#include "dmuq/rng.hpp"

using namespace dmuq;

namespace {

Quad square(Vec2 lo, double side) {
    return {lo, Vec2{lo.x + side, lo.y}, Vec2{lo.x + side, lo.y + side}, Vec2{lo.x, lo.y + side}};
}

Quad rotated_square(Vec2 center, double side, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double h = side / 2.0;
    const Quad body = {Vec2{-h, -h}, Vec2{h, -h}, Vec2{h, h}, Vec2{-h, h}};
    Quad out;
    for (size_t i = 0; i < 4; ++i)
        out[i] = {center.x + c * body[i].x - s * body[i].y,
                  center.y + s * body[i].x + c * body[i].y};
    return out;
}

// Random convex quad: four points on an ellipse at sorted angles.
Quad random_convex_quad(Rng& rng) {
    const Vec2 center{rng.uniform(2.0, 8.0), rng.uniform(2.0, 8.0)};
    const double a = rng.uniform(0.8, 3.0), b = rng.uniform(0.8, 3.0);
    const double tilt = rng.uniform(0.0, std::numbers::pi);
    std::vector<double> angles;
    for (int i = 0; i < 4; ++i)
        angles.push_back(rng.uniform(0.0, 0.5 * std::numbers::pi) +
                         i * 0.5 * std::numbers::pi);
    const double ct = std::cos(tilt), st = std::sin(tilt);
    Quad q;
    for (size_t i = 0; i < 4; ++i) {
        const double px = a * std::cos(angles[i]), py = b * std::sin(angles[i]);
        q[i] = {center.x + ct * px - st * py, center.y + st * px + ct * py};
    }
    return q;
}

ErrorCategory category_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.category();
    }
    FAIL("expected an error");
    return ErrorCategory::Io;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Independent all-point-interpolation AP: same definition, separate code.
double ap_oracle(const std::vector<ScoredBox>& dets, const std::vector<LabeledBox>& gts,
                 double thr) {
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
        if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
        return dets[i].frame < dets[j].frame;
    });
    std::vector<bool> used(gts.size(), false);
    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (size_t rank : order) {
        int best = -1;
        double best_iou = 0.0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].frame != dets[rank].frame) continue;
            const double iou = quad_iou(dets[rank].corners, gts[g].corners);
            if (iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0 && best_iou >= thr) {
            used[static_cast<size_t>(best)] = true;
            ++tp;
        } else {
            ++fp;
        }
        prec.push_back(double(tp) / double(tp + fp));
        rec.push_back(double(tp) / double(gts.size()));
    }
    double ap = 0.0, prev = 0.0;
    for (size_t i = 0; i < prec.size(); ++i) {
        double envelope = 0.0;  // max precision at this rank or later
        for (size_t j = i; j < prec.size(); ++j) envelope = std::max(envelope, prec[j]);
        ap += (rec[i] - prev) * envelope;
        prev = rec[i];
    }
    return ap;
}

struct RandomInstance {
    std::vector<ScoredBox> dets;
    std::vector<LabeledBox> gts;
};

RandomInstance random_instance(Rng& rng) {
    RandomInstance inst;
    const int n_frames = 3;
    for (int f = 0; f < n_frames; ++f) {
        const int n_gt = 1 + static_cast<int>(rng.uniform_int(3));
        for (int g = 0; g < n_gt; ++g) {
            LabeledBox gt;
            gt.frame = f;
            gt.corners = rotated_square({rng.uniform(2.0, 10.0), rng.uniform(2.0, 10.0)},
                                        rng.uniform(1.0, 2.5), rng.uniform(0.0, 3.0));
            inst.gts.push_back(gt);

            // A detection near this ground truth, sometimes two.
            const int copies = 1 + static_cast<int>(rng.uniform_int(2));
            for (int c = 0; c < copies; ++c) {
                ScoredBox d;
                d.frame = f;
                // Coarse score grid so ties actually happen.
                d.score = 0.1 * (1.0 + static_cast<double>(rng.uniform_int(9)));
                d.corners = gt.corners;
                const Vec2 jitter{rng.normal() * 0.4, rng.normal() * 0.4};
                for (auto& p : d.corners) p += jitter;
                inst.dets.push_back(d);
            }
        }
        // Pure noise detections.
        const int n_noise = static_cast<int>(rng.uniform_int(3));
        for (int k = 0; k < n_noise; ++k) {
            ScoredBox d;
            d.frame = f;
            d.score = 0.1 * (1.0 + static_cast<double>(rng.uniform_int(9)));
            d.corners = rotated_square({rng.uniform(2.0, 10.0), rng.uniform(2.0, 10.0)},
                                       rng.uniform(0.8, 2.0), rng.uniform(0.0, 3.0));
            inst.dets.push_back(d);
        }
    }
    return inst;
}

Detection det_with_corners(const Quad& q, double score) {
    Detection d;
    d.score = score;
    d.corners = q;
    return d;
}

GroundTruthBox gt_with_corners(const Quad& q, int object_id = 0) {
    GroundTruthBox b;
    b.cls = 1;
    b.object_id = object_id;
    b.corners = q;
    return b;
}

}  // namespace

TEST_CASE("rotated iou matches closed-form anchors") {
    const Quad unit = square({0, 0}, 1.0);
    CHECK(quad_iou(unit, unit) == doctest::Approx(1.0).epsilon(1e-15));

    // Half-overlapping unit squares: 0.5 / 1.5.
    CHECK(quad_iou(unit, square({0.5, 0.0}, 1.0)) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    // Contained square: 1 / 4.
    CHECK(quad_iou(square({0, 0}, 2.0), square({0.5, 0.5}, 1.0)) ==
          doctest::Approx(0.25).epsilon(1e-12));

    // Disjoint.
    CHECK(quad_iou(unit, square({5, 5}, 1.0)) == 0.0);
    // Edge-touching neighbours intersect with zero area.
    CHECK(quad_iou(unit, square({1.0, 0.0}, 1.0)) == 0.0);

    // A square against itself rotated 45 degrees about the center:
    // intersection is a regular octagon, iou = sqrt(2)/2.
    const Quad rot = rotated_square({0.5, 0.5}, 1.0, std::numbers::pi / 4.0);
    CHECK(quad_iou(unit, rot) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-12));

    // Winding and argument order do not matter.
    Quad cw = unit;
    std::reverse(cw.begin(), cw.end());
    CHECK(quad_iou(cw, rot) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-12));
    CHECK(quad_iou(rot, unit) == doctest::Approx(quad_iou(unit, rot)).epsilon(1e-15));

    // Degenerate geometry is an error, not a number.
    const Quad flat = {Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{3, 0}};
    CHECK(category_of([&] { (void)quad_iou(flat, unit); }) ==
          ErrorCategory::UndefinedGeometry);
}

TEST_CASE("rotated iou agrees with monte-carlo rasterization") {
    Rng rng(97, "iou-mc");
    for (int pair = 0; pair < 30; ++pair) {
        Quad a = random_convex_quad(rng);
        Quad b = random_convex_quad(rng);
        // Pull b toward a so a good share of pairs overlap.
        if (pair % 2 == 0) {
            const Vec2 shift = (a[0] - b[0]) * rng.uniform(0.4, 0.9);
            for (auto& p : b) p += shift;
        }
        const double analytic = quad_iou(a, b);

        double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
        for (const auto& p : {a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]}) {
            min_x = std::min(min_x, p.x);
            max_x = std::max(max_x, p.x);
            min_y = std::min(min_y, p.y);
            max_y = std::max(max_y, p.y);
        }
        int in_union = 0, in_inter = 0;
        const int n = 200000;
        for (int s = 0; s < n; ++s) {
            const Vec2 p{rng.uniform(min_x, max_x), rng.uniform(min_y, max_y)};
            const bool ina = point_in_convex(p, a);
            const bool inb = point_in_convex(p, b);
            in_union += (ina || inb) ? 1 : 0;
            in_inter += (ina && inb) ? 1 : 0;
        }
        REQUIRE(in_union > 0);
        const double mc = static_cast<double>(in_inter) / static_cast<double>(in_union);
        INFO("pair " << pair << " analytic " << analytic << " mc " << mc);
        CHECK(std::abs(analytic - mc) < 0.012);
    }
}

TEST_CASE("convexity screen accepts boxes and rejects bowties") {
    CHECK(is_convex_quad(square({0, 0}, 1.0)));
    CHECK(is_convex_quad(rotated_square({3, 3}, 2.0, 0.7)));
    Quad cw = square({0, 0}, 1.0);
    std::reverse(cw.begin(), cw.end());
    CHECK(is_convex_quad(cw));

    // Swapping adjacent corners makes a self-intersecting bowtie.
    Quad bowtie = square({0, 0}, 1.0);
    std::swap(bowtie[2], bowtie[3]);
    CHECK_FALSE(is_convex_quad(bowtie));

    const Quad collinear = {Vec2{0, 0}, Vec2{1, 0}, Vec2{2, 0}, Vec2{0, 1}};
    CHECK_FALSE(is_convex_quad(collinear));
}

TEST_CASE("average precision on hand-built curves") {
    std::vector<LabeledBox> gts = {{0, square({0, 0}, 2.0)}, {0, square({10, 10}, 2.0)}};

    // Perfect detector.
    std::vector<ScoredBox> perfect = {{0, 0.9, square({0, 0}, 2.0)},
                                      {0, 0.8, square({10, 10}, 2.0)}};
    CHECK(average_precision(perfect, gts, 0.5) == doctest::Approx(1.0).epsilon(1e-15));

    // All misses.
    std::vector<ScoredBox> misses = {{0, 0.9, square({20, 20}, 2.0)}};
    CHECK(average_precision(misses, gts, 0.5) == 0.0);
    CHECK(average_precision({}, gts, 0.5) == 0.0);

    // tp at .9, fp at .8, tp at .7: envelope gives 0.5*1 + 0.5*(2/3).
    std::vector<ScoredBox> mixed = {{0, 0.9, square({0, 0}, 2.0)},
                                    {0, 0.8, square({20, 20}, 2.0)},
                                    {0, 0.7, square({10, 10}, 2.0)}};
    CHECK(average_precision(mixed, gts, 0.5) ==
          doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));

    // A duplicate of an already-matched ground truth is a false positive.
    std::vector<ScoredBox> dup = {{0, 0.9, square({0, 0}, 2.0)},
                                  {0, 0.8, square({0.1, 0.0}, 2.0)},
                                  {0, 0.7, square({10, 10}, 2.0)}};
    const double ap_dup = average_precision(dup, gts, 0.5);
    CHECK(ap_dup == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));

    // Matching is per frame: same coordinates in another frame don't count.
    std::vector<ScoredBox> wrong_frame = {{1, 0.9, square({0, 0}, 2.0)}};
    CHECK(average_precision(wrong_frame, gts, 0.5) == 0.0);

    CHECK(category_of([&] { (void)average_precision(perfect, {}, 0.5); }) ==
          ErrorCategory::UndefinedMetric);
}

TEST_CASE("average precision matches an independent oracle on random instances") {
    Rng rng(101, "ap-oracle");
    for (int trial = 0; trial < 20; ++trial) {
        const RandomInstance inst = random_instance(rng);
        for (double thr : {0.5, 0.7}) {
            const double got = average_precision(inst.dets, inst.gts, thr);
            const double want = ap_oracle(inst.dets, inst.gts, thr);
            INFO("trial " << trial << " thr " << thr);
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0 + 1e-12);
        }
        // Tightening the threshold cannot raise the metric.
        CHECK(average_precision(inst.dets, inst.gts, 0.7) <=
              average_precision(inst.dets, inst.gts, 0.5) + 1e-12);
    }
}

TEST_CASE("greedy matching is score-ordered and exclusive") {
    const Quad g0 = square({0, 0}, 2.0);
    const Quad g1 = square({3, 0}, 2.0);
    std::vector<GroundTruthBox> gts = {gt_with_corners(g0, 0), gt_with_corners(g1, 1)};

    // Both detections overlap g0 best; the higher score claims it and the
    // lower one falls through to its threshold-passing alternative.
    std::vector<Detection> dets = {det_with_corners(square({1.4, 0.0}, 2.0), 0.7),
                                   det_with_corners(square({0.9, 0.0}, 2.0), 0.9)};
    auto pairs = match_boxes(dets, gts, 0.1);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0] == std::pair<int, int>{1, 0});
    CHECK(pairs[1] == std::pair<int, int>{0, 1});

    // Exact threshold boundary: iou == threshold still matches.
    const double boundary = quad_iou(square({1.0, 0.0}, 2.0), g0);  // = 1/3
    pairs = match_boxes({det_with_corners(square({1.0, 0.0}, 2.0), 0.5)}, gts, boundary);
    REQUIRE(pairs.size() == 1);
    // Just above the boundary: no match.
    pairs = match_boxes({det_with_corners(square({1.0, 0.0}, 2.0), 0.5)}, gts,
                        boundary + 1e-12);
    CHECK(pairs.empty());

    // Zero-overlap detections never match, even at threshold zero.
    pairs = match_boxes({det_with_corners(square({20, 20}, 2.0), 0.9)}, gts, 0.0);
    CHECK(pairs.empty());
}

TEST_CASE("nll of exact detections under unit covariance is ln(2pi)") {
    const double ln2pi = std::log(2.0 * std::numbers::pi);
    const Quad gq = rotated_square({5, 5}, 2.0, 0.37);

    Frame frame;
    frame.boxes = {gt_with_corners(gq)};

    // The detection reproduces the canonical corners exactly.
    const Quad canon = canonical_corners(gq);
    Detection det = det_with_corners(canon, 0.9);
    det.uncertainty.variant = CovVariant::IMG;
    for (int i = 0; i < 4; ++i) {
        CornerGaussian g;
        g.mean = {canon[static_cast<size_t>(i)].x, canon[static_cast<size_t>(i)].y};
        g.cov = CovMatrix::identity(2);
        det.uncertainty.corners.push_back(g);
    }
    CHECK(nll_score({{det}}, {frame}, 0.5) == doctest::Approx(ln2pi).epsilon(1e-12));

    // Same anchor through the per-dimension representation.
    Detection isg = det_with_corners(canon, 0.9);
    isg.uncertainty.variant = CovVariant::ISG;
    isg.uncertainty.variances.assign(8, 1.0);
    CHECK(nll_score({{isg}}, {frame}, 0.5) == doctest::Approx(ln2pi).epsilon(1e-12));

    // And through the joint representation (normalized per corner).
    Detection dmg = det_with_corners(canon, 0.9);
    dmg.uncertainty.variant = CovVariant::DMG;
    for (int i = 0; i < 4; ++i) {
        dmg.uncertainty.joint_mean.push_back(canon[static_cast<size_t>(i)].x);
        dmg.uncertainty.joint_mean.push_back(canon[static_cast<size_t>(i)].y);
    }
    dmg.uncertainty.joint_cov = CovMatrix::identity(8);
    CHECK(nll_score({{dmg}}, {frame}, 0.5) == doctest::Approx(ln2pi).epsilon(1e-12));

    // A squared residual of 4 in one dimension adds 2/4 to the corner mean.
    for (int i = 0; i < 4; ++i) {
        CornerGaussian g;
        g.mean = {canon[static_cast<size_t>(i)].x, canon[static_cast<size_t>(i)].y};
        if (i == 0) g.mean[0] += 2.0;  // residual 2 in x at one corner: q = 4
        g.cov = CovMatrix::identity(2);
        det.uncertainty.corners[static_cast<size_t>(i)] = g;
    }
    // Mean over 4 corners: ln2pi + (4/2)/4.
    CHECK(nll_score({{det}}, {frame}, 0.5) == doctest::Approx(ln2pi + 0.5).epsilon(1e-12));
}

TEST_CASE("nll is invariant to detection list order") {
    Rng rng(103, "nll-order");
    Frame frame;
    frame.boxes = {gt_with_corners(rotated_square({4, 4}, 2.0, 0.2), 0),
                   gt_with_corners(rotated_square({9, 9}, 2.0, 1.1), 1)};
    std::vector<Detection> dets;
    for (int k = 0; k < 2; ++k) {
        const Quad canon = canonical_corners(frame.boxes[static_cast<size_t>(k)].corners);
        Detection d = det_with_corners(canon, 0.9 - 0.2 * k);
        for (auto& p : d.corners) p += Vec2{rng.normal() * 0.1, rng.normal() * 0.1};
        d.uncertainty.variant = CovVariant::IMG;
        for (int i = 0; i < 4; ++i) {
            CornerGaussian g;
            g.mean = {d.corners[static_cast<size_t>(i)].x, d.corners[static_cast<size_t>(i)].y};
            g.cov = CovMatrix::identity(2);
            g.cov.at(0, 1) = 0.3;
            g.cov.at(1, 0) = 0.3;
            d.uncertainty.corners.push_back(g);
        }
        dets.push_back(d);
    }
    const double forward = nll_score({dets}, {frame}, 0.1);
    std::swap(dets[0], dets[1]);
    const double swapped = nll_score({dets}, {frame}, 0.1);
    CHECK(forward == doctest::Approx(swapped).epsilon(1e-15));
}

TEST_CASE("nll failure modes raise typed errors") {
    Frame frame;
    frame.boxes = {gt_with_corners(square({0, 0}, 2.0))};

    CHECK(category_of([&] { (void)nll_score({{}, {}}, {frame}, 0.5); }) ==
          ErrorCategory::Usage);

    // No detection matches: undefined metric.
    CHECK(category_of([&] { (void)nll_score({{}}, {frame}, 0.5); }) ==
          ErrorCategory::UndefinedMetric);

    // Matched detections without uncertainty payloads are undefined too.
    Detection bare = det_with_corners(canonical_corners(frame.boxes[0].corners), 0.9);
    bare.uncertainty.variant = CovVariant::None;
    CHECK(category_of([&] { (void)nll_score({{bare}}, {frame}, 0.5); }) ==
          ErrorCategory::UndefinedMetric);

    // Non-positive variance in the per-dimension payload.
    Detection isg = det_with_corners(canonical_corners(frame.boxes[0].corners), 0.9);
    isg.uncertainty.variant = CovVariant::ISG;
    isg.uncertainty.variances.assign(8, 0.0);
    CHECK(category_of([&] { (void)nll_score({{isg}}, {frame}, 0.5); }) ==
          ErrorCategory::InvalidParameter);
}

TEST_CASE("report writers emit the documented table and json lines") {
    MetricReport report;
    MetricRow a;
    a.mode = "inter";
    a.uq_method = "doublem";
    a.present = true;
    a.ap50 = 0.25;
    a.ap70 = 0.125;
    a.nll50 = 1.875;
    a.nll70 = 2.5;
    a.n_det = 42;
    a.n_gt = 40;
    a.seconds = 0.0;
    MetricRow b;
    b.mode = "inter";
    b.uq_method = "none";
    b.present = true;
    b.ap50 = 0.5;
    b.ap70 = 0.0625;
    b.nll50 = std::nullopt;
    b.nll70 = std::nullopt;
    b.n_det = 7;
    b.n_gt = 40;
    MetricRow c;
    c.mode = "lb";
    c.uq_method = "doublem";
    c.present = false;
    report.rows = {a, b, c};

    const std::string tpath = temp_path("dmuq_report.txt");
    const std::string jpath = temp_path("dmuq_report.jsonl");
    write_report_text(tpath, report);
    write_report_jsonl(jpath, report);

    std::ifstream tin(tpath);
    REQUIRE(tin.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(tin, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5);  // comment, header, three rows
    CHECK(lines[0].front() == '#');
    CHECK(lines[1].find("mode") != std::string::npos);
    CHECK(lines[1].find("ap50") != std::string::npos);
    CHECK(lines[2].find("doublem") != std::string::npos);
    CHECK(lines[2].find("0.250000") != std::string::npos);
    CHECK(lines[3].find("-") != std::string::npos);  // missing nll prints a dash
    CHECK(lines[4].find("(missing)") != std::string::npos);

    std::ifstream jin(jpath);
    REQUIRE(jin.good());
    std::vector<nlohmann::json> rows;
    while (std::getline(jin, line)) rows.push_back(nlohmann::json::parse(line));
    REQUIRE(rows.size() == 2);  // absent rows are skipped
    CHECK(rows[0]["mode"] == "inter");
    CHECK(rows[0]["uq_method"] == "doublem");
    CHECK(rows[0]["ap50"].get<double>() == 0.25);
    CHECK(rows[0]["nll50"].get<double>() == 1.875);
    CHECK(rows[0]["n_det"].get<int>() == 42);
    CHECK(rows[0]["seconds"].get<double>() == 0.0);
    CHECK(rows[1]["nll50"].is_null());
    CHECK(rows[1]["nll70"].is_null());

    std::filesystem::remove(tpath);
    std::filesystem::remove(jpath);
}
