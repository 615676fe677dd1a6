#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "dmuq/detector.hpp"
#include "dmuq/distributions.hpp"
#include "dmuq/error.hpp"
#include "dmuq/eval.hpp"
#include "dmuq/matrix.hpp"
#include "dmuq/rng.hpp"
#include "dmuq/scenegen.hpp"
#include "dmuq/tensor.hpp"

#include "fd_check.hpp"

using namespace dmuq;

namespace {

// 8x8 raster (12 m world), 2x2 head grid: small enough for finite
// differences over every parameter.
SceneConfig tiny_scene() {
    SceneConfig cfg;
    cfg.world_size = 12.0;
    cfg.cells_per_meter = 2.0 / 3.0;
    cfg.n_agents = 2;
    cfg.max_objects = 2;
    cfg.sensing_radius = 30.0;
    cfg.occlusion = false;
    cfg.motion_noise = 0.1;
    cfg.seed = 3;
    cfg.train_scenes = 1;
    cfg.train_frames = 4;
    cfg.val_scenes = 1;
    cfg.val_frames = 2;
    cfg.test_scenes = 1;
    cfg.test_frames = 2;
    return cfg;
}

// 16x16 raster (24 m world) for training smoke tests.
SceneConfig small_scene() {
    SceneConfig cfg = tiny_scene();
    cfg.world_size = 24.0;
    cfg.n_agents = 2;
    cfg.max_objects = 3;
    cfg.sensing_radius = 20.0;
    cfg.occlusion = true;
    cfg.seed = 11;
    cfg.train_frames = 8;
    return cfg;
}

GroundTruthBox oriented_box(Vec2 center, double heading, double length, double width,
                            int object_id = 0) {
    const double c = std::cos(heading), s = std::sin(heading);
    const double hl = 0.5 * length, hw = 0.5 * width;
    const Quad body = {Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}, Vec2{hl, hw}};
    GroundTruthBox b;
    b.cls = 1;
    b.object_id = object_id;
    for (size_t i = 0; i < 4; ++i)
        b.corners[i] = {center.x + c * body[i].x - s * body[i].y,
                        center.y + s * body[i].x + c * body[i].y};
    return b;
}

Frame frame_with(const SceneConfig& cfg, std::vector<GroundTruthBox> boxes,
                 std::vector<Vec2> agents) {
    Frame f;
    f.scene_id = 0;
    f.index = 0;
    f.boxes = std::move(boxes);
    f.agent_poses = std::move(agents);
    for (size_t a = 0; a < f.agent_poses.size(); ++a)
        f.views.push_back(rasterize_view(f.boxes, f.agent_poses[a], static_cast<int>(a), cfg));
    return f;
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

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

bool same_params(const ModelParams& a, const ModelParams& b) {
    const auto da = a.directory();
    const auto db = b.directory();
    if (a.variant != b.variant || da.size() != db.size()) return false;
    for (size_t i = 0; i < da.size(); ++i) {
        if (da[i].first != db[i].first) return false;
        if (da[i].second.shape() != db[i].second.shape()) return false;
        if (da[i].second.value() != db[i].second.value()) return false;
    }
    return true;
}

ModelParams clone_params(const ModelParams& p) {
    const std::string path = temp_path("dmuq_det_clone.ckpt");
    write_checkpoint(path, p);
    ModelParams q = read_checkpoint(path);
    std::filesystem::remove(path);
    return q;
}

}  // namespace

TEST_CASE("collaboration mode names round-trip") {
    for (CollabMode m :
         {CollabMode::LowerBound, CollabMode::Intermediate, CollabMode::EarlyUpperBound})
        CHECK(collab_mode_from_string(to_string(m)) == m);
    CHECK(std::string(to_string(CollabMode::LowerBound)) == "lb");
    CHECK(std::string(to_string(CollabMode::Intermediate)) == "inter");
    CHECK(std::string(to_string(CollabMode::EarlyUpperBound)) == "early");
    CHECK(category_of([] { collab_mode_from_string("late"); }) == ErrorCategory::Config);
}

TEST_CASE("covariance head widths follow the variant") {
    CHECK(cov_head_width(CovVariant::None) == 0);
    CHECK(cov_head_width(CovVariant::IMG) == 12);  // 4 corners x 3 Cholesky raws
    CHECK(cov_head_width(CovVariant::ISG) == 8);   // 4 corners x 2 log-stds
    CHECK(cov_head_width(CovVariant::DMG) == 36);  // 8x8 Cholesky raws
}

TEST_CASE("initialized models have the documented structure") {
    Rng rng(42, "init-test");
    ModelParams p = init_model(CovVariant::IMG, rng);
    CHECK(p.variant == CovVariant::IMG);
    CHECK(p.enc1_w.shape() == std::vector<int>{8, 1, 3, 3});
    CHECK(p.enc2_w.shape() == std::vector<int>{16, 8, 3, 3});
    CHECK(p.dec_w.shape() == std::vector<int>{16, 16, 3, 3});
    CHECK(p.cls_w.shape() == std::vector<int>{1, 16, 1, 1});
    CHECK(p.reg_w.shape() == std::vector<int>{8, 16, 1, 1});
    CHECK(p.cov_w.shape() == std::vector<int>{12, 16, 1, 1});
    CHECK(p.directory().size() == 12);

    // Background-heavy classification prior.
    CHECK(p.cls_b.value()[0] == -2.0);
    // Per-corner Cholesky raws: two diagonal entries at 1, off-diagonal 0.
    for (int i = 0; i < 4; ++i) {
        CHECK(p.cov_b.value()[static_cast<size_t>(3 * i)] == 1.0);
        CHECK(p.cov_b.value()[static_cast<size_t>(3 * i + 1)] == 1.0);
        CHECK(p.cov_b.value()[static_cast<size_t>(3 * i + 2)] == 0.0);
    }

    Rng rng_isg(42, "init-test");
    ModelParams isg = init_model(CovVariant::ISG, rng_isg);
    for (double v : isg.cov_b.value()) CHECK(v == 1.0);

    Rng rng_dmg(42, "init-test");
    ModelParams dmg = init_model(CovVariant::DMG, rng_dmg);
    for (int k = 0; k < 36; ++k) {
        const bool diag = k < 8;
        CHECK(dmg.cov_b.value()[static_cast<size_t>(k)] == (diag ? 1.0 : 0.0));
    }

    Rng rng_none(42, "init-test");
    ModelParams none = init_model(CovVariant::None, rng_none);
    CHECK(none.directory().size() == 10);

    // Same seed, same trunk; different seed, different trunk.
    Rng rng_b(42, "init-test");
    ModelParams p2 = init_model(CovVariant::IMG, rng_b);
    CHECK(p.enc1_w.value() == p2.enc1_w.value());
    Rng rng_c(43, "init-test");
    ModelParams p3 = init_model(CovVariant::IMG, rng_c);
    CHECK(p.enc1_w.value() != p3.enc1_w.value());
}

TEST_CASE("encoder downsamples by four and rejects odd grids") {
    const SceneConfig cfg = tiny_scene();
    Rng rng(1, "enc");
    const ModelParams p = init_model(CovVariant::None, rng);
    const Frame f = frame_with(cfg, {oriented_box({6.0, 6.0}, 0.4, 4.5, 2.0)}, {{6.0, 6.0}});
    const Tensor feat = encode(f.views[0], p);
    CHECK(feat.shape() == std::vector<int>{16, 2, 2});

    BEVGrid odd(6, 8, 0);
    CHECK(category_of([&] { (void)encode(odd, p); }) == ErrorCategory::Usage);
}

TEST_CASE("aggregation keeps ego, or takes the elementwise max") {
    Rng rng(5, "agg");
    auto rand_tensor = [&] {
        std::vector<double> v(16 * 2 * 2);
        for (auto& x : v) x = rng.normal();
        return Tensor::constant({16, 2, 2}, std::move(v));
    };
    std::vector<Tensor> feats = {rand_tensor(), rand_tensor(), rand_tensor()};

    const Tensor lb = aggregate(feats, CollabMode::LowerBound, 1);
    CHECK(lb.value() == feats[1].value());
    const Tensor early = aggregate(feats, CollabMode::EarlyUpperBound, 2);
    CHECK(early.value() == feats[2].value());

    const Tensor inter = aggregate(feats, CollabMode::Intermediate, 0);
    for (size_t i = 0; i < inter.value().size(); ++i) {
        const double expect =
            std::max({feats[0].value()[i], feats[1].value()[i], feats[2].value()[i]});
        CHECK(inter.value()[i] == expect);
    }

    CHECK(category_of([&] { aggregate({}, CollabMode::Intermediate, 0); }) ==
          ErrorCategory::Usage);
    CHECK(category_of([&] { aggregate(feats, CollabMode::LowerBound, 3); }) ==
          ErrorCategory::Usage);
}

TEST_CASE("one agent makes every collaboration mode identical") {
    const SceneConfig cfg = tiny_scene();
    Rng rng(9, "single");
    const ModelParams p = init_model(CovVariant::IMG, rng);
    const Frame f = frame_with(cfg, {oriented_box({4.0, 7.0}, 1.0, 4.5, 2.0)}, {{6.0, 6.0}});

    const RawOutputs lb = forward_frame(f, p, CollabMode::LowerBound);
    const RawOutputs inter = forward_frame(f, p, CollabMode::Intermediate);
    const RawOutputs early = forward_frame(f, p, CollabMode::EarlyUpperBound);
    CHECK(lb.logits.value() == inter.logits.value());
    CHECK(lb.logits.value() == early.logits.value());
    CHECK(lb.reg.value() == inter.reg.value());
    CHECK(lb.reg.value() == early.reg.value());
    CHECK(lb.cov.value() == inter.cov.value());
    CHECK(lb.cov.value() == early.cov.value());
}

TEST_CASE("early fusion equals ego-only on a pre-fused frame") {
    const SceneConfig cfg = tiny_scene();
    Rng rng(10, "prefused");
    const ModelParams p = init_model(CovVariant::ISG, rng);
    const Frame f = frame_with(
        cfg, {oriented_box({3.5, 3.5}, 0.2, 4.5, 2.0), oriented_box({8.5, 8.5}, 2.1, 4.5, 2.0, 1)},
        {{3.0, 9.0}, {9.0, 3.0}});

    Frame fused = f;
    fused.views = {fuse_early(f.views)};
    fused.agent_poses = {f.agent_poses[0]};

    const RawOutputs a = forward_frame(f, p, CollabMode::EarlyUpperBound);
    const RawOutputs b = forward_frame(fused, p, CollabMode::LowerBound);
    CHECK(a.logits.value() == b.logits.value());
    CHECK(a.reg.value() == b.reg.value());
    CHECK(a.cov.value() == b.cov.value());
}

TEST_CASE("target assignment picks center cells and larger colliders") {
    const SceneConfig cfg = tiny_scene();
    const double head_cell = cfg.cell_size() * DetectorConfig::kDownsample;  // 6 m
    REQUIRE(head_cell == doctest::Approx(6.0));

    // Two boxes in distinct head cells.
    Frame f = frame_with(cfg,
                         {oriented_box({3.0, 3.0}, 0.0, 4.5, 2.0, 0),
                          oriented_box({9.0, 8.5}, 0.3, 4.5, 2.0, 1)},
                         {{6.0, 6.0}});
    CellTargets t = assign_targets(f, 2, 2, head_cell);
    CHECK(t.cls == std::vector<double>{1.0, 0.0, 0.0, 1.0});
    CHECK(t.box_index[0] == 0);
    CHECK(t.box_index[3] == 1);
    CHECK(t.box_index[1] == -1);

    // Collision in cell (0,0): the larger box wins regardless of order.
    GroundTruthBox small_box = oriented_box({3.0, 3.0}, 0.0, 2.0, 1.0, 0);
    GroundTruthBox big_box = oriented_box({4.0, 4.0}, 0.0, 4.5, 2.0, 1);
    Frame g;
    g.agent_poses = {{6.0, 6.0}};
    g.views.emplace_back(8, 8, 0);
    g.boxes = {small_box, big_box};
    CellTargets tg = assign_targets(g, 2, 2, head_cell);
    CHECK(tg.box_index[0] == 1);
    g.boxes = {big_box, small_box};
    tg = assign_targets(g, 2, 2, head_cell);
    CHECK(tg.box_index[0] == 0);
    CHECK(tg.cls[0] == 1.0);

    // A box whose center leaves the grid is ignored.
    g.boxes = {oriented_box({-3.0, 3.0}, 0.0, 4.5, 2.0, 0)};
    tg = assign_targets(g, 2, 2, head_cell);
    CHECK(tg.cls == std::vector<double>{0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("detection loss gradients match finite differences") {
    const SceneConfig cfg = tiny_scene();
    const Frame f = frame_with(
        cfg, {oriented_box({3.0, 3.0}, 0.7, 4.5, 2.0, 0), oriented_box({9.0, 8.0}, 2.4, 4.5, 2.0, 1)},
        {{4.0, 4.0}, {8.0, 8.0}});

    struct Case {
        CovVariant variant;
        CollabMode mode;
        uint64_t seed;
    };
    const std::vector<Case> cases = {
        {CovVariant::IMG, CollabMode::Intermediate, 21},
        {CovVariant::ISG, CollabMode::LowerBound, 22},
        {CovVariant::DMG, CollabMode::EarlyUpperBound, 23},
        {CovVariant::None, CollabMode::Intermediate, 24},
    };
    for (const auto& c : cases) {
        Rng rng(c.seed, "fd-detector");
        ModelParams p = init_model(c.variant, rng);
        // Jitter every parameter off its init: exact-zero biases park empty
        // cells precisely on the relu kink, where a slope has no meaning.
        for (auto& [name, t] : p.directory()) {
            (void)name;
            for (auto& v : t.value()) v += rng.normal() * 0.03;
        }
        auto loss_fn = [&] {
            RawOutputs raw = forward_frame(f, p, c.mode);
            return detection_loss(raw, f, p, cfg);
        };
        // Floor 1e-5: entries whose analytic and numeric slopes are both
        // below it compare absolutely, keeping fd roundoff (~1e-10 at this
        // loss scale) out of the relative error.
        const auto res = fdcheck::run(loss_fn, p.directory(), 1e-5, 1e-5);
        INFO("variant " << static_cast<int>(c.variant) << " worst " << res.worst);
        CHECK(res.checked > 3000);
        CHECK(res.max_rel_err <= 1e-4);
    }
}

TEST_CASE("a frame with no labels still trains the classifier") {
    const SceneConfig cfg = tiny_scene();
    Frame f;
    f.agent_poses = {{6.0, 6.0}};
    f.views.emplace_back(8, 8, 0);
    // One lit cell so the input is not all zeros.
    f.views[0].at(3, 3) = 1;

    Rng rng(31, "empty-frame");
    ModelParams p = init_model(CovVariant::IMG, rng);
    RawOutputs raw = forward_frame(f, p, CollabMode::LowerBound);
    Tensor loss = detection_loss(raw, f, p, cfg);
    CHECK(loss.item() > 0.0);
    p.zero_grad();
    loss.backward();
    bool any_nonzero = false;
    for (auto& [name, t] : p.directory()) {
        (void)name;
        if (!t.has_grad()) continue;
        for (double gradv : t.grad()) {
            CHECK(std::isfinite(gradv));
            any_nonzero = any_nonzero || gradv != 0.0;
        }
    }
    CHECK(any_nonzero);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);
    Rng rng(17, "lr0");
    ModelParams p = init_model(CovVariant::IMG, rng);
    const ModelParams before = clone_params(p);
    Rng batch(17, "batch");
    train(splits.train, p, 2, 0.0, 0.9, batch, cfg, CollabMode::Intermediate);
    CHECK(same_params(p, before));
}

TEST_CASE("training is deterministic given seed and start point") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);
    Rng rng(19, "det-train");
    const ModelParams start = init_model(CovVariant::ISG, rng);

    ModelParams a = clone_params(start);
    ModelParams b = clone_params(start);
    Rng ra(7, "batch");
    Rng rb(7, "batch");
    const TrainResult ta = train(splits.train, a, 3, 3e-4, 0.9, ra, cfg, CollabMode::Intermediate);
    const TrainResult tb = train(splits.train, b, 3, 3e-4, 0.9, rb, cfg, CollabMode::Intermediate);
    CHECK(ta.epoch_loss == tb.epoch_loss);
    CHECK(same_params(a, b));
    CHECK(ta.epoch_loss.size() == 3);

    // A different shuffle seed changes the outcome.
    ModelParams c = clone_params(start);
    Rng rc(8, "batch");
    train(splits.train, c, 3, 3e-4, 0.9, rc, cfg, CollabMode::Intermediate);
    CHECK_FALSE(same_params(a, c));
}

TEST_CASE("loss falls when overfitting one frame") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);
    Rng rng(23, "overfit");
    ModelParams p = init_model(CovVariant::IMG, rng);
    Rng batch(23, "batch");
    const TrainResult r =
        train(splits.train, p, 40, 3e-4, 0.9, batch, cfg, CollabMode::Intermediate, {0});
    REQUIRE(r.epoch_loss.size() == 40);
    for (double v : r.epoch_loss) CHECK(std::isfinite(v));
    CHECK(r.epoch_loss.back() < 0.7 * r.epoch_loss.front());

    CHECK(category_of([&] {
        Dataset empty;
        Rng rb(1, "batch");
        ModelParams q = clone_params(p);
        train(empty, q, 1, 1e-3, 0.9, rb, cfg, CollabMode::Intermediate);
    }) == ErrorCategory::Training);
}

TEST_CASE("detections respect threshold, bounds, convexity, and the nms cap") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);
    Rng rng(29, "detect-props");
    ModelParams p = init_model(CovVariant::IMG, rng);
    Rng batch(29, "batch");
    train(splits.train, p, 15, 3e-4, 0.9, batch, cfg, CollabMode::Intermediate);

    DetectorConfig dc;
    dc.variant = CovVariant::IMG;
    dc.mode = CollabMode::Intermediate;
    dc.score_threshold = 0.05;
    dc.nms_iou = 0.3;

    const double head_cell = cfg.cell_size() * DetectorConfig::kDownsample;
    int total = 0;
    for (const auto& f : splits.train.frames) {
        const auto dets = detect(f, p, dc, cfg);
        total += static_cast<int>(dets.size());
        for (size_t i = 0; i < dets.size(); ++i) {
            CHECK(dets[i].score >= dc.score_threshold);
            CHECK(is_convex_quad(dets[i].corners));
            CHECK(std::abs(signed_area(dets[i].corners)) >= 1e-6);
            // Corners stay within two head cells of their source cell center.
            const int w = 4;  // 16-cell raster -> 4x4 head grid
            const double cx = (dets[i].cell % w + 0.5) * head_cell;
            const double cy = (dets[i].cell / w + 0.5) * head_cell;
            for (const auto& corner : dets[i].corners) {
                CHECK(std::abs(corner.x - cx) <= 2.0 * head_cell + 1e-12);
                CHECK(std::abs(corner.y - cy) <= 2.0 * head_cell + 1e-12);
            }
            for (size_t j = i + 1; j < dets.size(); ++j)
                CHECK(quad_iou(dets[i].corners, dets[j].corners) <= dc.nms_iou + 1e-12);
        }
    }
    CHECK(total > 0);
}

TEST_CASE("detect matches an independent decode-and-suppress oracle") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);
    Rng rng(37, "detect-oracle");
    ModelParams p = init_model(CovVariant::None, rng);
    Rng batch(37, "batch");
    train(splits.train, p, 10, 3e-4, 0.9, batch, cfg, CollabMode::Intermediate);

    DetectorConfig dc;
    dc.variant = CovVariant::None;
    dc.mode = CollabMode::Intermediate;
    dc.score_threshold = 0.05;
    dc.nms_iou = 0.3;

    for (const auto& f : splits.train.frames) {
        const auto dets = detect(f, p, dc, cfg);

        // Oracle: rebuild candidates from the raw outputs, then greedy NMS.
        NoGradGuard guard;
        const RawOutputs raw = forward_frame(f, p, dc.mode);
        const double head_cell = cfg.cell_size() * DetectorConfig::kDownsample;
        struct Cand {
            double score;
            int cell;
            Quad corners;
        };
        std::vector<Cand> cands;
        for (int row = 0; row < raw.h; ++row)
            for (int col = 0; col < raw.w; ++col) {
                const double logit = raw.logits.value()[static_cast<size_t>(row) * raw.w + col];
                const double score = 1.0 / (1.0 + std::exp(-logit));
                if (score < dc.score_threshold) continue;
                Cand c;
                c.score = score;
                c.cell = row * raw.w + col;
                for (int i = 0; i < 4; ++i) {
                    const auto& rv = raw.reg.value();
                    const double tx =
                        rv[(static_cast<size_t>(2 * i) * raw.h + row) * raw.w + col];
                    const double ty =
                        rv[(static_cast<size_t>(2 * i + 1) * raw.h + row) * raw.w + col];
                    c.corners[static_cast<size_t>(i)] = {
                        (col + 0.5) * head_cell + 2.0 * head_cell * std::tanh(tx),
                        (row + 0.5) * head_cell + 2.0 * head_cell * std::tanh(ty)};
                }
                if (std::abs(signed_area(c.corners)) < 1e-6 || !is_convex_quad(c.corners))
                    continue;
                cands.push_back(c);
            }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.cell < b.cell;
        });
        std::vector<Cand> kept;
        for (const auto& c : cands) {
            bool drop = false;
            for (const auto& k : kept)
                if (quad_iou(c.corners, k.corners) > dc.nms_iou) {
                    drop = true;
                    break;
                }
            if (!drop) kept.push_back(c);
        }

        REQUIRE(dets.size() == kept.size());
        for (size_t i = 0; i < dets.size(); ++i) {
            CHECK(dets[i].score == doctest::Approx(kept[i].score).epsilon(1e-12));
            CHECK(dets[i].cell == kept[i].cell);
            for (size_t j = 0; j < 4; ++j) {
                CHECK(dets[i].corners[j].x == doctest::Approx(kept[i].corners[j].x).epsilon(1e-12));
                CHECK(dets[i].corners[j].y == doctest::Approx(kept[i].corners[j].y).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("uncertainty payloads are positive semidefinite for wild heads") {
    const SceneConfig cfg = small_scene();
    const DatasetSplits splits = generate_splits(cfg);

    for (CovVariant variant : {CovVariant::IMG, CovVariant::ISG, CovVariant::DMG}) {
        Rng rng(41 + static_cast<uint64_t>(variant), "psd-stress");
        ModelParams p = init_model(variant, rng);
        // Exaggerate the head so raw outputs slam into the clamps.
        for (auto& v : p.cov_w.value()) v = rng.normal() * 40.0;
        for (auto& v : p.cov_b.value()) v = rng.normal() * 5.0;
        // Bias the corner head toward a genuine rectangle so the decoded
        // quads pass the convexity screen in every cell.
        const double bx = std::atanh(0.3), by = std::atanh(0.2);
        p.reg_b.value() = {-bx, -by, bx, -by, bx, by, -bx, by};
        for (auto& v : p.reg_w.value()) v = rng.normal() * 0.02;

        DetectorConfig dc;
        dc.variant = variant;
        dc.mode = CollabMode::Intermediate;
        dc.score_threshold = 0.0;  // keep every cell
        dc.nms_iou = 2.0;          // suppress nothing

        int seen = 0;
        for (const auto& f : splits.train.frames) {
            for (const auto& det : detect(f, p, dc, cfg)) {
                ++seen;
                switch (variant) {
                    case CovVariant::IMG:
                        REQUIRE(det.uncertainty.corners.size() == 4);
                        for (const auto& g : det.uncertainty.corners) {
                            CHECK(is_psd(g.cov));
                            CHECK(g.cov.dim() == 2);
                        }
                        break;
                    case CovVariant::ISG:
                        REQUIRE(det.uncertainty.variances.size() == 8);
                        for (double v : det.uncertainty.variances) {
                            CHECK(std::isfinite(v));
                            CHECK(v > 0.0);
                        }
                        break;
                    case CovVariant::DMG:
                        CHECK(det.uncertainty.joint_cov.dim() == 8);
                        CHECK(is_psd(det.uncertainty.joint_cov));
                        break;
                    case CovVariant::None: break;
                }
            }
        }
        INFO("variant " << static_cast<int>(variant));
        CHECK(seen > 100);
    }
}

TEST_CASE("checkpoints round-trip bit-exactly for every variant") {
    for (CovVariant variant :
         {CovVariant::None, CovVariant::IMG, CovVariant::ISG, CovVariant::DMG}) {
        Rng rng(51, "ckpt");
        const ModelParams p = init_model(variant, rng);
        const std::string p1 = temp_path("dmuq_det_ck1.ckpt");
        const std::string p2 = temp_path("dmuq_det_ck2.ckpt");
        write_checkpoint(p1, p);
        const ModelParams back = read_checkpoint(p1);
        CHECK(back.variant == variant);
        CHECK(same_params(p, back));
        write_checkpoint(p2, back);
        CHECK(slurp(p1) == slurp(p2));
        std::filesystem::remove(p1);
        std::filesystem::remove(p2);
    }
}

TEST_CASE("checkpoint io rejects corrupted files") {
    CHECK(category_of([] { (void)read_checkpoint("/nonexistent/model.ckpt"); }) ==
          ErrorCategory::Io);

    const std::string path = temp_path("dmuq_det_bad.ckpt");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACHECKPT";
    }
    CHECK(category_of([&] { (void)read_checkpoint(path); }) == ErrorCategory::Io);

    Rng rng(53, "ckpt-bad");
    const ModelParams p = init_model(CovVariant::IMG, rng);
    write_checkpoint(path, p);

    // Flip the recorded variant: head widths no longer match.
    auto bytes = slurp(path);
    bytes[7] = 0;  // IMG -> None right after the 7-byte magic
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK(category_of([&] { (void)read_checkpoint(path); }) == ErrorCategory::Io);

    // Truncation mid-payload.
    write_checkpoint(path, p);
    bytes = slurp(path);
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK(category_of([&] { (void)read_checkpoint(path); }) == ErrorCategory::Io);
    std::filesystem::remove(path);
}
