#pragma once

#include <string>
#include <vector>

#include "dmuq/detector.hpp"
#include "dmuq/doublem.hpp"
#include "dmuq/scenegen.hpp"

namespace dmuq {

// Scoring settings shared by evaluation and inference.
struct EvalConfig {
    std::vector<double> iou_thresholds{0.5, 0.7};  // fixed: reports carry @0.5 and @0.7 columns
    double score_threshold = 0.3;
    double nms_iou = 0.3;
};

// Input/output locations, resolved relative to the working directory.
struct PathsConfig {
    std::string data = "data";
    std::string artifacts = "artifacts";
};

// One reproducible run: every random draw flows from `seed` through named
// sub-streams, so there are no wall-clock defaults anywhere.
struct RunConfig {
    uint64_t seed = 42;
    SceneConfig scene;        // scene.seed is kept in sync with seed
    DetectorConfig detector;  // detector.score_threshold/nms_iou mirror eval
    DoubleMConfig doublem;
    EvalConfig eval;
    PathsConfig paths;
};

bool operator==(const EvalConfig& a, const EvalConfig& b);
bool operator==(const PathsConfig& a, const PathsConfig& b);
bool operator==(const SceneConfig& a, const SceneConfig& b);
bool operator==(const DetectorConfig& a, const DetectorConfig& b);
bool operator==(const DoubleMConfig& a, const DoubleMConfig& b);
bool operator==(const RunConfig& a, const RunConfig& b);

// JSON config IO. Unknown keys, malformed values, or broken invariants
// raise config errors; parse -> serialize -> parse is the identity.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

}  // namespace dmuq
