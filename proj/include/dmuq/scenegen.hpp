#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmuq/geom.hpp"
#include "dmuq/rng.hpp"

namespace dmuq {

// World/sensing/motion parameters for the synthetic multi-agent BEV world.
struct SceneConfig {
    double world_size = 48.0;              // square world edge, meters
    double cells_per_meter = 2.0 / 3.0;    // raster resolution (32 cells / 48 m)
    int n_agents = 3;
    int max_objects = 6;
    double sensing_radius = 20.0;          // meters
    bool occlusion = true;
    double motion_noise = 0.1;             // per-frame speed/heading jitter scale
    uint64_t seed = 42;

    int train_scenes = 8;
    int train_frames = 100;
    int val_scenes = 2;
    int val_frames = 50;
    int test_scenes = 2;
    int test_frames = 50;

    int grid_cells() const;     // raster edge length in cells
    double cell_size() const;   // meters per raster cell
    void validate() const;      // raises config errors
};

// Axis-aligned binary occupancy raster over the whole world.
struct BEVGrid {
    int rows = 0;
    int cols = 0;
    int agent_id = -1;  // -1 for fused grids
    std::vector<uint8_t> cells;

    BEVGrid() = default;
    BEVGrid(int r, int c, int agent) : rows(r), cols(c), agent_id(agent), cells(static_cast<size_t>(r) * c, 0) {}

    uint8_t at(int r, int c) const { return cells[static_cast<size_t>(r) * cols + c]; }
    uint8_t& at(int r, int c) { return cells[static_cast<size_t>(r) * cols + c]; }
    int occupied_count() const;
};

// One labeled vehicle: four corners ordered counterclockwise starting at the
// rear-left (rear-left, rear-right, front-right, front-left).
struct GroundTruthBox {
    int cls = 1;
    int object_id = 0;
    Quad corners;

    Vec2 center() const {
        Vec2 c;
        for (const auto& p : corners) c += p;
        return c * 0.25;
    }
    double area() const;
};

struct Frame {
    int scene_id = 0;
    int index = 0;  // consecutive within a scene
    std::vector<Vec2> agent_poses;
    std::vector<BEVGrid> views;  // one per agent
    std::vector<GroundTruthBox> boxes;
};

struct Dataset {
    SceneConfig config;
    int n_scenes = 0;
    std::vector<Frame> frames;  // ordered by (scene_id, index)
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Rasterize what one agent sees: cells overlapped by an object, within
// sensing radius, and (with occlusion on) not shadowed by a nearer object.
BEVGrid rasterize_view(const std::vector<GroundTruthBox>& boxes, const Vec2& agent_pose,
                       int agent_id, const SceneConfig& cfg);

// Cellwise OR across per-agent grids.
BEVGrid fuse_early(const std::vector<BEVGrid>& grids);

// Generate one multi-scene dataset; trajectories are smooth (constant
// velocity plus seeded heading/speed jitter, wall reflection), so
// consecutive frames are statistically dependent. Deterministic given rng
// state.
Dataset generate_dataset(const SceneConfig& cfg, int n_scenes, int frames_per_scene,
                         int first_scene_id, Rng& rng);

// Generate the train/val/test splits from the config seed in one pass.
DatasetSplits generate_splits(const SceneConfig& cfg);

// Container IO ("DMUQDS1"); bit-exact round-trip.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace dmuq
