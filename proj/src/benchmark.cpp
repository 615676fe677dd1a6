#include "dmuq/benchmark.hpp"

#include <filesystem>

#include "dmuq/doublem.hpp"

namespace dmuq {

namespace {

const char* kModes[] = {"lb", "inter", "early"};

bool needs_stats(const std::string& method) {
    return method.rfind("mbb", 0) == 0 || method.rfind("doublem", 0) == 0;
}

}  // namespace

std::vector<GridCell> default_grid() {
    std::vector<GridCell> cells;
    for (const char* mode : kModes)
        for (const char* method : {"none", "dm", "mbb", "doublem"})
            cells.push_back({mode, method});
    return cells;
}

std::vector<GridCell> ablation_grid() {
    std::vector<GridCell> cells;
    for (const char* mode : kModes)
        for (const char* method : {"dm-isg", "dm-dmg", "doublem-isg", "doublem-dmg"})
            cells.push_back({mode, method});
    return cells;
}

std::string cell_artifact_base(const GridCell& cell) { return cell.method + "-" + cell.mode; }

MetricRow evaluate_cell(const GridCell& cell, const RunConfig& cfg, const Dataset& test_set,
                        const std::string& artifacts_dir) {
    MetricRow row;
    row.mode = cell.mode;
    row.uq_method = cell.method;

    const std::string base = artifacts_dir + "/" + cell_artifact_base(cell);
    const std::string ckpt_path = base + ".ckpt";
    const std::string uqs_path = base + ".uqs";
    if (!std::filesystem::exists(ckpt_path)) return row;
    const bool with_stats = needs_stats(cell.method);
    if (with_stats && !std::filesystem::exists(uqs_path)) return row;

    const ModelParams params = read_checkpoint(ckpt_path);
    UQStats stats;
    if (with_stats) stats = read_uqstats(uqs_path);

    DetectorConfig inf_cfg = cfg.detector;
    inf_cfg.variant = params.variant;
    inf_cfg.mode = collab_mode_from_string(cell.mode);

    std::vector<std::vector<Detection>> per_frame;
    per_frame.reserve(test_set.frames.size());
    std::vector<ScoredBox> scored;
    std::vector<LabeledBox> labeled;
    for (size_t f = 0; f < test_set.frames.size(); ++f) {
        const Frame& frame = test_set.frames[f];
        std::vector<Detection> dets =
            with_stats ? double_m_infer(frame, params, stats, inf_cfg, test_set.config)
                       : detect(frame, params, inf_cfg, test_set.config);
        for (const auto& d : dets)
            scored.push_back({static_cast<int>(f), d.score, d.corners});
        for (const auto& b : frame.boxes) labeled.push_back({static_cast<int>(f), b.corners});
        row.n_det += static_cast<int>(dets.size());
        row.n_gt += static_cast<int>(frame.boxes.size());
        per_frame.push_back(std::move(dets));
    }

    row.ap50 = average_precision(scored, labeled, 0.5);
    row.ap70 = average_precision(scored, labeled, 0.7);

    const bool has_uncertainty =
        !per_frame.empty() &&
        (with_stats || params.variant != CovVariant::None);
    if (has_uncertainty) {
        try {
            row.nll50 = nll_score(per_frame, test_set.frames, 0.5);
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::UndefinedMetric) throw;
        }
        try {
            row.nll70 = nll_score(per_frame, test_set.frames, 0.7);
        } catch (const Error& e) {
            if (e.category() != ErrorCategory::UndefinedMetric) throw;
        }
    }
    row.present = true;
    return row;
}

MetricReport run_benchmark(const RunConfig& cfg, const Dataset& test_set,
                           const std::string& artifacts_dir, const std::vector<GridCell>& cells) {
    MetricReport report;
    if (!cells.empty()) {
        for (const auto& cell : cells)
            report.rows.push_back(evaluate_cell(cell, cfg, test_set, artifacts_dir));
        return report;
    }
    for (const auto& cell : default_grid())
        report.rows.push_back(evaluate_cell(cell, cfg, test_set, artifacts_dir));
    for (const auto& cell : ablation_grid()) {
        const std::string ckpt =
            artifacts_dir + "/" + cell_artifact_base(cell) + ".ckpt";
        if (!std::filesystem::exists(ckpt)) continue;
        report.rows.push_back(evaluate_cell(cell, cfg, test_set, artifacts_dir));
    }
    return report;
}

}  // namespace dmuq
