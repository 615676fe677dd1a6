#include "dmuq/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dmuq/error.hpp"

namespace dmuq {

using json = nlohmann::ordered_json;

bool operator==(const EvalConfig& a, const EvalConfig& b) {
    return a.iou_thresholds == b.iou_thresholds && a.score_threshold == b.score_threshold &&
           a.nms_iou == b.nms_iou;
}

bool operator==(const PathsConfig& a, const PathsConfig& b) {
    return a.data == b.data && a.artifacts == b.artifacts;
}

bool operator==(const SceneConfig& a, const SceneConfig& b) {
    return a.world_size == b.world_size && a.cells_per_meter == b.cells_per_meter &&
           a.n_agents == b.n_agents && a.max_objects == b.max_objects &&
           a.sensing_radius == b.sensing_radius && a.occlusion == b.occlusion &&
           a.motion_noise == b.motion_noise && a.seed == b.seed &&
           a.train_scenes == b.train_scenes && a.train_frames == b.train_frames &&
           a.val_scenes == b.val_scenes && a.val_frames == b.val_frames &&
           a.test_scenes == b.test_scenes && a.test_frames == b.test_frames;
}

bool operator==(const DetectorConfig& a, const DetectorConfig& b) {
    return a.variant == b.variant && a.mode == b.mode && a.lr == b.lr &&
           a.momentum == b.momentum && a.pretrain_epochs == b.pretrain_epochs &&
           a.score_threshold == b.score_threshold && a.nms_iou == b.nms_iou;
}

bool operator==(const DoubleMConfig& a, const DoubleMConfig& b) {
    return a.block_length == b.block_length && a.n_bootstraps == b.n_bootstraps &&
           a.refine_epochs == b.refine_epochs && a.match_iou == b.match_iou;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
    return a.seed == b.seed && a.scene == b.scene && a.detector == b.detector &&
           a.doublem == b.doublem && a.eval == b.eval && a.paths == b.paths;
}

namespace {

[[noreturn]] void bad(const std::string& msg) { raise(ErrorCategory::Config, msg); }

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) bad("'" + where + "' must be a JSON object");
    for (const auto& item : obj.items())
        if (!allowed.count(item.key())) bad("unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;  // keep default
    try {
        it->get_to(out);
    } catch (const json::exception&) {
        bad("bad value for '" + std::string(key) + "' in " + where);
    }
}

void parse_scene(const json& obj, SceneConfig& s) {
    check_keys(obj, "scene",
               {"world_size", "cells_per_meter", "n_agents", "max_objects", "sensing_radius",
                "occlusion", "motion_noise", "train_scenes", "train_frames", "val_scenes",
                "val_frames", "test_scenes", "test_frames"});
    get_to(obj, "world_size", s.world_size, "scene");
    get_to(obj, "cells_per_meter", s.cells_per_meter, "scene");
    get_to(obj, "n_agents", s.n_agents, "scene");
    get_to(obj, "max_objects", s.max_objects, "scene");
    get_to(obj, "sensing_radius", s.sensing_radius, "scene");
    get_to(obj, "occlusion", s.occlusion, "scene");
    get_to(obj, "motion_noise", s.motion_noise, "scene");
    get_to(obj, "train_scenes", s.train_scenes, "scene");
    get_to(obj, "train_frames", s.train_frames, "scene");
    get_to(obj, "val_scenes", s.val_scenes, "scene");
    get_to(obj, "val_frames", s.val_frames, "scene");
    get_to(obj, "test_scenes", s.test_scenes, "scene");
    get_to(obj, "test_frames", s.test_frames, "scene");
}

void parse_detector(const json& obj, DetectorConfig& d) {
    check_keys(obj, "detector", {"variant", "mode", "lr", "momentum", "pretrain_epochs"});
    std::string variant = to_string(d.variant);
    std::string mode = to_string(d.mode);
    get_to(obj, "variant", variant, "detector");
    get_to(obj, "mode", mode, "detector");
    d.variant = cov_variant_from_string(variant);
    d.mode = collab_mode_from_string(mode);
    get_to(obj, "lr", d.lr, "detector");
    get_to(obj, "momentum", d.momentum, "detector");
    get_to(obj, "pretrain_epochs", d.pretrain_epochs, "detector");
    if (!(d.lr > 0.0)) bad("detector.lr must be positive");
    if (d.momentum < 0.0 || d.momentum >= 1.0) bad("detector.momentum must be in [0, 1)");
    if (d.pretrain_epochs < 1) bad("detector.pretrain_epochs must be >= 1");
}

void parse_doublem(const json& obj, DoubleMConfig& m) {
    check_keys(obj, "doublem", {"block_length", "n_bootstraps", "refine_epochs", "match_iou"});
    get_to(obj, "block_length", m.block_length, "doublem");
    get_to(obj, "n_bootstraps", m.n_bootstraps, "doublem");
    get_to(obj, "refine_epochs", m.refine_epochs, "doublem");
    get_to(obj, "match_iou", m.match_iou, "doublem");
    if (m.block_length < 1) bad("doublem.block_length must be >= 1");
    if (m.n_bootstraps < 1) bad("doublem.n_bootstraps must be >= 1");
    if (m.refine_epochs < 1) bad("doublem.refine_epochs must be >= 1");
    if (!(m.match_iou > 0.0 && m.match_iou < 1.0)) bad("doublem.match_iou must be in (0, 1)");
}

void parse_eval(const json& obj, EvalConfig& e) {
    check_keys(obj, "eval", {"iou_thresholds", "score_threshold", "nms_iou"});
    get_to(obj, "iou_thresholds", e.iou_thresholds, "eval");
    get_to(obj, "score_threshold", e.score_threshold, "eval");
    get_to(obj, "nms_iou", e.nms_iou, "eval");
    if (e.iou_thresholds != std::vector<double>{0.5, 0.7})
        bad("eval.iou_thresholds must be [0.5, 0.7]");
    if (!(e.score_threshold > 0.0 && e.score_threshold < 1.0))
        bad("eval.score_threshold must be in (0, 1)");
    if (!(e.nms_iou > 0.0 && e.nms_iou < 1.0)) bad("eval.nms_iou must be in (0, 1)");
}

void parse_paths(const json& obj, PathsConfig& p) {
    check_keys(obj, "paths", {"data", "artifacts"});
    get_to(obj, "data", p.data, "paths");
    get_to(obj, "artifacts", p.artifacts, "paths");
    if (p.data.empty() || p.artifacts.empty()) bad("paths must not be empty strings");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        bad(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(root, "config", {"seed", "scene", "detector", "doublem", "eval", "paths"});
    if (!root.contains("seed")) bad("config requires an explicit 'seed'");

    RunConfig cfg;
    try {
        root.at("seed").get_to(cfg.seed);
    } catch (const json::exception&) {
        bad("'seed' must be an unsigned integer");
    }
    if (root.contains("scene")) parse_scene(root.at("scene"), cfg.scene);
    if (root.contains("detector")) parse_detector(root.at("detector"), cfg.detector);
    if (root.contains("doublem")) parse_doublem(root.at("doublem"), cfg.doublem);
    if (root.contains("eval")) parse_eval(root.at("eval"), cfg.eval);
    if (root.contains("paths")) parse_paths(root.at("paths"), cfg.paths);

    cfg.scene.seed = cfg.seed;
    cfg.scene.validate();
    cfg.detector.score_threshold = cfg.eval.score_threshold;
    cfg.detector.nms_iou = cfg.eval.nms_iou;
    if (cfg.doublem.block_length > cfg.scene.train_frames)
        bad("doublem.block_length exceeds scene.train_frames");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "cannot open config '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
    json root;
    root["seed"] = cfg.seed;
    json scene;
    scene["world_size"] = cfg.scene.world_size;
    scene["cells_per_meter"] = cfg.scene.cells_per_meter;
    scene["n_agents"] = cfg.scene.n_agents;
    scene["max_objects"] = cfg.scene.max_objects;
    scene["sensing_radius"] = cfg.scene.sensing_radius;
    scene["occlusion"] = cfg.scene.occlusion;
    scene["motion_noise"] = cfg.scene.motion_noise;
    scene["train_scenes"] = cfg.scene.train_scenes;
    scene["train_frames"] = cfg.scene.train_frames;
    scene["val_scenes"] = cfg.scene.val_scenes;
    scene["val_frames"] = cfg.scene.val_frames;
    scene["test_scenes"] = cfg.scene.test_scenes;
    scene["test_frames"] = cfg.scene.test_frames;
    root["scene"] = scene;
    json det;
    det["variant"] = to_string(cfg.detector.variant);
    det["mode"] = to_string(cfg.detector.mode);
    det["lr"] = cfg.detector.lr;
    det["momentum"] = cfg.detector.momentum;
    det["pretrain_epochs"] = cfg.detector.pretrain_epochs;
    root["detector"] = det;
    json dm;
    dm["block_length"] = cfg.doublem.block_length;
    dm["n_bootstraps"] = cfg.doublem.n_bootstraps;
    dm["refine_epochs"] = cfg.doublem.refine_epochs;
    dm["match_iou"] = cfg.doublem.match_iou;
    root["doublem"] = dm;
    json ev;
    ev["iou_thresholds"] = cfg.eval.iou_thresholds;
    ev["score_threshold"] = cfg.eval.score_threshold;
    ev["nms_iou"] = cfg.eval.nms_iou;
    root["eval"] = ev;
    json paths;
    paths["data"] = cfg.paths.data;
    paths["artifacts"] = cfg.paths.artifacts;
    root["paths"] = paths;
    return root.dump(2) + "\n";
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    out << serialize_config(cfg);
    if (!out) raise(ErrorCategory::Io, "failed to write '" + path + "'");
}

}  // namespace dmuq
