#include "dmuq/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmuq/binio.hpp"

namespace dmuq {

namespace {

constexpr double kCarLength = 4.5;  // meters
constexpr double kCarWidth = 2.0;

double half_diagonal() { return 0.5 * std::hypot(kCarLength, kCarWidth); }

// Body-frame corners, counterclockwise from rear-left (+x is forward).
Quad body_corners(double length, double width) {
    const double hl = 0.5 * length, hw = 0.5 * width;
    return {Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}, Vec2{hl, hw}};
}

Quad place_box(const Vec2& center, double heading, double length, double width) {
    const double c = std::cos(heading), s = std::sin(heading);
    Quad out;
    Quad body = body_corners(length, width);
    for (size_t i = 0; i < 4; ++i)
        out[i] = {center.x + c * body[i].x - s * body[i].y,
                  center.y + s * body[i].x + c * body[i].y};
    return out;
}

struct MovingObject {
    int object_id;
    Vec2 center;
    double heading;
    double speed;
    double length;
    double width;
};

// Advance one frame: jitter heading/speed, move, reflect off world margins.
void step_object(MovingObject& o, const SceneConfig& cfg, double margin, Rng& rng) {
    o.heading += rng.normal() * cfg.motion_noise;
    o.speed = std::clamp(o.speed + rng.normal() * cfg.motion_noise, 0.3, 1.4);
    Vec2 next{o.center.x + o.speed * std::cos(o.heading),
              o.center.y + o.speed * std::sin(o.heading)};
    if (next.x < margin || next.x > cfg.world_size - margin) {
        o.heading = std::numbers::pi - o.heading;
        next.x = std::clamp(next.x, margin, cfg.world_size - margin);
    }
    if (next.y < margin || next.y > cfg.world_size - margin) {
        o.heading = -o.heading;
        next.y = std::clamp(next.y, margin, cfg.world_size - margin);
    }
    o.center = next;
}

bool fully_in_range(const GroundTruthBox& box, const Vec2& agent, double radius) {
    return dist(box.center(), agent) + half_diagonal() <= radius;
}

}  // namespace

int SceneConfig::grid_cells() const {
    return static_cast<int>(std::llround(world_size * cells_per_meter));
}

double SceneConfig::cell_size() const { return world_size / grid_cells(); }

void SceneConfig::validate() const {
    if (n_agents < 1) raise(ErrorCategory::Config, "scene: n_agents must be >= 1");
    if (!(sensing_radius > 0.0)) raise(ErrorCategory::Config, "scene: sensing radius must be positive");
    if (!(world_size > 0.0) || !(cells_per_meter > 0.0))
        raise(ErrorCategory::Config, "scene: world size and resolution must be positive");
    if (grid_cells() < 4) raise(ErrorCategory::Config, "scene: grid too small");
    if (max_objects < 1) raise(ErrorCategory::Config, "scene: max_objects must be >= 1");
    // Packing feasibility: objects need room to be placed without overlap.
    const double per_object = 8.0 * kCarLength * kCarWidth;
    if (static_cast<double>(max_objects) * per_object > world_size * world_size)
        raise(ErrorCategory::Config, "scene: too many objects for the world size");
    if (train_scenes < 1 || val_scenes < 1 || test_scenes < 1)
        raise(ErrorCategory::Config, "scene: every split needs at least one scene");
    if (train_frames < 1 || val_frames < 1 || test_frames < 1)
        raise(ErrorCategory::Config, "scene: every split needs at least one frame per scene");
}

int BEVGrid::occupied_count() const {
    int n = 0;
    for (uint8_t c : cells) n += c;
    return n;
}

double GroundTruthBox::area() const { return std::abs(signed_area(corners)); }

BEVGrid rasterize_view(const std::vector<GroundTruthBox>& boxes, const Vec2& agent_pose,
                       int agent_id, const SceneConfig& cfg) {
    const int n = cfg.grid_cells();
    const double cell = cfg.cell_size();
    BEVGrid grid(n, n, agent_id);

    auto occluded = [&](const Vec2& target, double d_target) {
        if (!cfg.occlusion) return false;
        const double step = 0.5 * cell;
        if (d_target <= step) return false;
        const Vec2 dir = (target - agent_pose) * (1.0 / d_target);
        for (double s = step; s < d_target - cell; s += step) {
            const Vec2 p = agent_pose + dir * s;
            for (const auto& box : boxes)
                if (point_in_convex(p, box.corners)) return true;
        }
        return false;
    };

    for (const auto& box : boxes) {
        // Cell bounding range of the box.
        double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
        for (const auto& c : box.corners) {
            min_x = std::min(min_x, c.x);
            max_x = std::max(max_x, c.x);
            min_y = std::min(min_y, c.y);
            max_y = std::max(max_y, c.y);
        }
        const int c0 = std::max(0, static_cast<int>(std::floor(min_x / cell)));
        const int c1 = std::min(n - 1, static_cast<int>(std::floor(max_x / cell)));
        const int r0 = std::max(0, static_cast<int>(std::floor(min_y / cell)));
        const int r1 = std::min(n - 1, static_cast<int>(std::floor(max_y / cell)));

        std::vector<Vec2> box_poly(box.corners.begin(), box.corners.end());
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (grid.at(r, c)) continue;
                const std::vector<Vec2> cell_poly = {
                    {c * cell, r * cell},
                    {(c + 1) * cell, r * cell},
                    {(c + 1) * cell, (r + 1) * cell},
                    {c * cell, (r + 1) * cell}};
                auto inter = clip_convex(box_poly, cell_poly);
                if (inter.size() < 3 || std::abs(signed_area(inter)) < 1e-9) continue;
                const Vec2 center{(c + 0.5) * cell, (r + 0.5) * cell};
                const double d = dist(center, agent_pose);
                if (d > cfg.sensing_radius) continue;
                if (occluded(center, d)) continue;
                grid.at(r, c) = 1;
            }
        }
    }
    return grid;
}

BEVGrid fuse_early(const std::vector<BEVGrid>& grids) {
    if (grids.empty()) raise(ErrorCategory::Usage, "fuse_early: no grids");
    BEVGrid out(grids.front().rows, grids.front().cols, -1);
    for (const auto& g : grids) {
        if (g.rows != out.rows || g.cols != out.cols)
            raise(ErrorCategory::Usage, "fuse_early: grid dimension mismatch");
        for (size_t i = 0; i < out.cells.size(); ++i) out.cells[i] |= g.cells[i];
    }
    return out;
}

namespace {

std::vector<Vec2> place_agents(const SceneConfig& cfg, Rng& rng) {
    const double margin = 4.0;
    std::vector<Vec2> poses;
    const double min_sep = std::min(16.0, cfg.world_size * 0.33);
    int guard = 0;
    while (static_cast<int>(poses.size()) < cfg.n_agents) {
        Vec2 p{rng.uniform(margin, cfg.world_size - margin),
               rng.uniform(margin, cfg.world_size - margin)};
        bool ok = true;
        for (const auto& q : poses) ok = ok && dist(p, q) >= min_sep;
        if (ok) poses.push_back(p);
        if (++guard > 10000) raise(ErrorCategory::Config, "scene: cannot place agents apart");
    }
    return poses;
}

std::vector<MovingObject> place_objects(const SceneConfig& cfg, double margin, Rng& rng) {
    const int count = 2 + static_cast<int>(rng.uniform_int(
                              static_cast<uint64_t>(std::max(1, cfg.max_objects - 1))));
    std::vector<MovingObject> objects;
    int guard = 0;
    while (static_cast<int>(objects.size()) < count) {
        MovingObject o;
        o.object_id = static_cast<int>(objects.size());
        o.center = {rng.uniform(margin, cfg.world_size - margin),
                    rng.uniform(margin, cfg.world_size - margin)};
        o.heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        o.speed = rng.uniform(0.4, 1.2);
        o.length = kCarLength;
        o.width = kCarWidth;
        bool ok = true;
        for (const auto& q : objects) ok = ok && dist(o.center, q.center) >= 7.0;
        if (ok) objects.push_back(o);
        if (++guard > 20000)
            raise(ErrorCategory::Config, "scene: cannot place objects without overlap");
    }
    return objects;
}

std::vector<Frame> generate_scene(const SceneConfig& cfg, int scene_id, int n_frames, Rng& rng) {
    const double margin = half_diagonal() + 0.5;
    auto poses = place_agents(cfg, rng);
    auto objects = place_objects(cfg, margin, rng);

    std::vector<Frame> frames;
    frames.reserve(static_cast<size_t>(n_frames));
    for (int k = 0; k < n_frames; ++k) {
        Frame f;
        f.scene_id = scene_id;
        f.index = k;
        f.agent_poses = poses;
        for (auto& o : objects) {
            if (k > 0) step_object(o, cfg, margin, rng);
            GroundTruthBox box;
            box.cls = 1;
            box.object_id = o.object_id;
            box.corners = place_box(o.center, o.heading, o.length, o.width);
            f.boxes.push_back(box);
        }
        for (int a = 0; a < cfg.n_agents; ++a)
            f.views.push_back(rasterize_view(f.boxes, poses[static_cast<size_t>(a)], a, cfg));
        frames.push_back(std::move(f));
    }
    return frames;
}

// A box fully inside some agent's sensing disc must occupy >= 1 fused cell.
bool frames_detectable(const std::vector<Frame>& frames, const SceneConfig& cfg) {
    const double cell = cfg.cell_size();
    const int n = cfg.grid_cells();
    for (const auto& f : frames) {
        BEVGrid fused = fuse_early(f.views);
        for (const auto& box : f.boxes) {
            bool in_range = false;
            for (const auto& pose : f.agent_poses)
                in_range = in_range || fully_in_range(box, pose, cfg.sensing_radius);
            if (!in_range) continue;
            double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
            for (const auto& c : box.corners) {
                min_x = std::min(min_x, c.x);
                max_x = std::max(max_x, c.x);
                min_y = std::min(min_y, c.y);
                max_y = std::max(max_y, c.y);
            }
            bool hit = false;
            for (int r = std::max(0, static_cast<int>(min_y / cell));
                 !hit && r <= std::min(n - 1, static_cast<int>(max_y / cell)); ++r)
                for (int c = std::max(0, static_cast<int>(min_x / cell));
                     !hit && c <= std::min(n - 1, static_cast<int>(max_x / cell)); ++c)
                    hit = fused.at(r, c) != 0;
            if (!hit) return false;
        }
    }
    return true;
}

}  // namespace

Dataset generate_dataset(const SceneConfig& cfg, int n_scenes, int frames_per_scene,
                         int first_scene_id, Rng& rng) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.n_scenes = n_scenes;
    for (int s = 0; s < n_scenes; ++s) {
        std::vector<Frame> frames;
        for (int attempt = 0;; ++attempt) {
            frames = generate_scene(cfg, first_scene_id + s, frames_per_scene, rng);
            if (frames_detectable(frames, cfg)) break;
            if (attempt >= 100)
                raise(ErrorCategory::Config, "scene: cannot generate a detectable scene");
        }
        for (auto& f : frames) ds.frames.push_back(std::move(f));
    }
    return ds;
}

DatasetSplits generate_splits(const SceneConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed, "scenegen");
    DatasetSplits splits;
    splits.train = generate_dataset(cfg, cfg.train_scenes, cfg.train_frames, 0, rng);
    splits.val = generate_dataset(cfg, cfg.val_scenes, cfg.val_frames, cfg.train_scenes, rng);
    splits.test = generate_dataset(cfg, cfg.test_scenes, cfg.test_frames,
                                   cfg.train_scenes + cfg.val_scenes, rng);
    return splits;
}

// ---------------------------------------------------------------------------
// Container IO
// ---------------------------------------------------------------------------

namespace {

void write_grid(ByteBuffer& w, const BEVGrid& g) {
    w.u32(static_cast<uint32_t>(g.rows));
    w.u32(static_cast<uint32_t>(g.cols));
    // Run-length encoding: alternating run lengths, first run counts zeros.
    std::vector<uint32_t> runs;
    uint8_t current = 0;
    uint32_t len = 0;
    for (uint8_t c : g.cells) {
        if (c == current) {
            ++len;
        } else {
            runs.push_back(len);
            current = c;
            len = 1;
        }
    }
    runs.push_back(len);
    w.u32(static_cast<uint32_t>(runs.size()));
    for (uint32_t r : runs) w.u32(r);
}

BEVGrid read_grid(BinReader& r, int agent_id) {
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    BEVGrid g(rows, cols, agent_id);
    const uint32_t n_runs = r.u32();
    size_t pos = 0;
    uint8_t current = 0;
    for (uint32_t i = 0; i < n_runs; ++i) {
        uint32_t len = r.u32();
        if (pos + len > g.cells.size()) raise(ErrorCategory::Io, "grid run overflow");
        for (uint32_t j = 0; j < len; ++j) g.cells[pos++] = current;
        current = current ? 0 : 1;
    }
    if (pos != g.cells.size()) raise(ErrorCategory::Io, "grid run underflow");
    return g;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
    BinWriter w(path);
    w.magic("DMUQDS1");
    const auto& c = ds.config;
    w.f64(c.world_size);
    w.f64(c.cells_per_meter);
    w.u32(static_cast<uint32_t>(c.n_agents));
    w.u32(static_cast<uint32_t>(c.max_objects));
    w.f64(c.sensing_radius);
    w.u8(c.occlusion ? 1 : 0);
    w.f64(c.motion_noise);
    w.u64(c.seed);
    w.u32(static_cast<uint32_t>(c.train_scenes));
    w.u32(static_cast<uint32_t>(c.train_frames));
    w.u32(static_cast<uint32_t>(c.val_scenes));
    w.u32(static_cast<uint32_t>(c.val_frames));
    w.u32(static_cast<uint32_t>(c.test_scenes));
    w.u32(static_cast<uint32_t>(c.test_frames));
    w.u32(static_cast<uint32_t>(ds.n_scenes));
    w.u32(static_cast<uint32_t>(ds.frames.size()));

    for (const auto& f : ds.frames) {
        // Encode the frame body first so the record can be length-prefixed.
        ByteBuffer body;
        body.u32(static_cast<uint32_t>(f.scene_id));
        body.u32(static_cast<uint32_t>(f.index));
        body.u32(static_cast<uint32_t>(f.agent_poses.size()));
        for (const auto& p : f.agent_poses) {
            body.f64(p.x);
            body.f64(p.y);
        }
        body.u32(static_cast<uint32_t>(f.views.size()));
        for (const auto& g : f.views) write_grid(body, g);
        body.u32(static_cast<uint32_t>(f.boxes.size()));
        for (const auto& b : f.boxes) {
            body.u32(static_cast<uint32_t>(b.cls));
            body.u32(static_cast<uint32_t>(b.object_id));
            for (const auto& corner : b.corners) {
                body.f64(corner.x);
                body.f64(corner.y);
            }
        }
        w.u32(static_cast<uint32_t>(body.data.size()));
        w.bytes(body.data);
    }
    w.close();
}

Dataset read_dataset(const std::string& path) {
    BinReader r(path);
    r.magic("DMUQDS1");
    Dataset ds;
    auto& c = ds.config;
    c.world_size = r.f64();
    c.cells_per_meter = r.f64();
    c.n_agents = static_cast<int>(r.u32());
    c.max_objects = static_cast<int>(r.u32());
    c.sensing_radius = r.f64();
    c.occlusion = r.u8() != 0;
    c.motion_noise = r.f64();
    c.seed = r.u64();
    c.train_scenes = static_cast<int>(r.u32());
    c.train_frames = static_cast<int>(r.u32());
    c.val_scenes = static_cast<int>(r.u32());
    c.val_frames = static_cast<int>(r.u32());
    c.test_scenes = static_cast<int>(r.u32());
    c.test_frames = static_cast<int>(r.u32());
    ds.n_scenes = static_cast<int>(r.u32());
    const uint32_t n_frames = r.u32();

    for (uint32_t i = 0; i < n_frames; ++i) {
        (void)r.u32();  // record length; sequential read does not skip
        Frame f;
        f.scene_id = static_cast<int>(r.u32());
        f.index = static_cast<int>(r.u32());
        const uint32_t n_poses = r.u32();
        for (uint32_t j = 0; j < n_poses; ++j) {
            Vec2 p;
            p.x = r.f64();
            p.y = r.f64();
            f.agent_poses.push_back(p);
        }
        const uint32_t n_views = r.u32();
        for (uint32_t j = 0; j < n_views; ++j) f.views.push_back(read_grid(r, static_cast<int>(j)));
        const uint32_t n_boxes = r.u32();
        for (uint32_t j = 0; j < n_boxes; ++j) {
            GroundTruthBox b;
            b.cls = static_cast<int>(r.u32());
            b.object_id = static_cast<int>(r.u32());
            for (auto& corner : b.corners) {
                corner.x = r.f64();
                corner.y = r.f64();
            }
            f.boxes.push_back(b);
        }
        ds.frames.push_back(std::move(f));
    }
    return ds;
}

}  // namespace dmuq
