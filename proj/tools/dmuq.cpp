// Command-line entry point: dataset generation, training, evaluation, and
// frame visualization, all reproducible from one seeded config file.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dmuq/benchmark.hpp"
#include "dmuq/config.hpp"
#include "dmuq/doublem.hpp"
#include "dmuq/viz.hpp"

namespace {

using dmuq::Dataset;
using dmuq::DetectorConfig;
using dmuq::RunConfig;

bool verbose() {
    const char* v = std::getenv("DMUQ_VERBOSE");
    return v != nullptr && v[0] != '\0' && std::string(v) != "0";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Dataset files written by `gen` and read back by every other command.
std::string split_path(const std::string& dir, const char* split) {
    return dir + "/" + split + ".ds";
}

Dataset load_split(const RunConfig& cfg, const char* split) {
    const Dataset ds = dmuq::read_dataset(split_path(cfg.paths.data, split));
    if (!(ds.config == cfg.scene))
        dmuq::raise(dmuq::ErrorCategory::Config,
                    std::string(split) + " dataset was generated with a different configuration");
    return ds;
}

// Method token used in artifact names, report rows, and RNG stream tags:
// the plain method name, plus a variant suffix for non-default variants
// (e.g. "doublem-isg").
std::string method_token(const std::string& method, dmuq::CovVariant variant) {
    if (method == "none" || method == "mbb") return method;
    if (variant == dmuq::CovVariant::IMG) return method;
    return method + "-" + dmuq::to_string(variant);
}

void write_loss_trace(const std::string& path, const std::vector<double>& trace) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) dmuq::raise(dmuq::ErrorCategory::Io, "cannot open '" + path + "' for writing");
    for (double v : trace) std::fprintf(f, "%.17g\n", v);
    std::fclose(f);
}

int cmd_gen(const std::string& config_path, const std::string& out_dir, int frames_override) {
    RunConfig cfg = dmuq::load_config(config_path);
    if (frames_override > 0) {
        cfg.scene.train_frames = frames_override;
        cfg.scene.val_frames = frames_override;
        cfg.scene.test_frames = frames_override;
        cfg.scene.validate();
    }
    std::filesystem::create_directories(out_dir);
    const auto t0 = std::chrono::steady_clock::now();
    const dmuq::DatasetSplits splits = dmuq::generate_splits(cfg.scene);
    dmuq::write_dataset(split_path(out_dir, "train"), splits.train);
    dmuq::write_dataset(split_path(out_dir, "val"), splits.val);
    dmuq::write_dataset(split_path(out_dir, "test"), splits.test);
    std::printf("train: %zu frames (%d scenes)\n", splits.train.frames.size(),
                splits.train.n_scenes);
    std::printf("val: %zu frames (%d scenes)\n", splits.val.frames.size(), splits.val.n_scenes);
    std::printf("test: %zu frames (%d scenes)\n", splits.test.frames.size(),
                splits.test.n_scenes);
    if (verbose()) std::printf("gen took %.2f s\n", seconds_since(t0));
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& method, const std::string& mode,
              const std::string& variant, const std::string& out_dir) {
    RunConfig cfg = dmuq::load_config(config_path);
    DetectorConfig det = cfg.detector;
    if (!mode.empty()) det.mode = dmuq::collab_mode_from_string(mode);
    if (!variant.empty()) {
        if (method == "none" || method == "mbb")
            dmuq::raise(dmuq::ErrorCategory::Usage,
                        "--variant does not apply to method '" + method + "'");
        det.variant = dmuq::cov_variant_from_string(variant);
    }
    const std::string token = method_token(method, det.variant);
    const std::string base = out_dir + "/" + token + "-" + dmuq::to_string(det.mode);

    const Dataset train_set = load_split(cfg, "train");
    std::filesystem::create_directories(out_dir);

    const auto t0 = std::chrono::steady_clock::now();
    dmuq::TrainArtifacts art;
    if (method == "none") {
        art = dmuq::run_none(train_set, det, cfg.seed, token);
    } else if (method == "dm") {
        art = dmuq::run_dm(train_set, det, cfg.seed, token);
    } else if (method == "mbb") {
        const Dataset val_set = load_split(cfg, "val");
        art = dmuq::run_mbb(train_set, val_set, cfg.doublem, det, cfg.seed, token);
    } else if (method == "doublem") {
        const Dataset val_set = load_split(cfg, "val");
        art = dmuq::double_m_train(train_set, val_set, cfg.doublem, det, cfg.seed, token);
    } else {
        dmuq::raise(dmuq::ErrorCategory::Usage, "unknown method '" + method + "'");
    }

    dmuq::write_checkpoint(base + ".ckpt", art.params);
    write_loss_trace(base + ".loss.txt", art.loss_trace);
    if (art.stats) {
        dmuq::write_uqstats(base + ".uqs", *art.stats);
        dmuq::write_residual_log(base + ".residuals.txt", art.residuals);
    }
    std::printf("trained %s (%.2f s) -> %s.ckpt\n", token.c_str(), seconds_since(t0),
                base.c_str());
    if (verbose() && !art.loss_trace.empty())
        std::printf("final epoch loss %.6f over %zu epochs\n", art.loss_trace.back(),
                    art.loss_trace.size());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& artifacts_dir,
             const std::string& report_path) {
    RunConfig cfg = dmuq::load_config(config_path);
    const Dataset test_set = load_split(cfg, "test");
    const auto t0 = std::chrono::steady_clock::now();
    const dmuq::MetricReport report = dmuq::run_benchmark(cfg, test_set, artifacts_dir);
    dmuq::write_report_text(report_path, report);
    std::string jsonl = report_path;
    const std::string suffix = ".txt";
    if (jsonl.size() > suffix.size() &&
        jsonl.compare(jsonl.size() - suffix.size(), suffix.size(), suffix) == 0)
        jsonl.resize(jsonl.size() - suffix.size());
    jsonl += ".jsonl";
    dmuq::write_report_jsonl(jsonl, report);
    int present = 0;
    for (const auto& row : report.rows) present += row.present ? 1 : 0;
    std::printf("evaluated %d/%zu grid cells (%.2f s) -> %s, %s\n", present, report.rows.size(),
                seconds_since(t0), report_path.c_str(), jsonl.c_str());
    return 0;
}

int cmd_viz(const std::string& config_path, int frame_index, const std::string& artifacts_dir,
            const std::string& out_path, const std::string& method, const std::string& mode) {
    RunConfig cfg = dmuq::load_config(config_path);
    const Dataset test_set = load_split(cfg, "test");
    if (frame_index < 0 || static_cast<size_t>(frame_index) >= test_set.frames.size())
        dmuq::raise(dmuq::ErrorCategory::Usage,
                    "frame " + std::to_string(frame_index) + " out of range (test split has " +
                        std::to_string(test_set.frames.size()) + " frames)");
    const dmuq::Frame& frame = test_set.frames[static_cast<size_t>(frame_index)];

    DetectorConfig det = cfg.detector;
    if (!mode.empty()) det.mode = dmuq::collab_mode_from_string(mode);
    const std::string base =
        artifacts_dir + "/" + method + "-" + dmuq::to_string(det.mode);
    const dmuq::ModelParams params = dmuq::read_checkpoint(base + ".ckpt");
    det.variant = params.variant;

    std::vector<dmuq::Detection> dets;
    if (std::filesystem::exists(base + ".uqs")) {
        const dmuq::UQStats stats = dmuq::read_uqstats(base + ".uqs");
        dets = dmuq::double_m_infer(frame, params, stats, det, test_set.config);
    } else {
        dets = dmuq::detect(frame, params, det, test_set.config);
    }
    dmuq::render_frame_svg(out_path, frame, dets, test_set.config);
    std::printf("rendered frame %d with %zu detections -> %s\n", frame_index, dets.size(),
                out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collaborative BEV detection with bootstrapped uncertainty"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::string report_path;
    std::string artifacts_dir;
    std::string method;
    std::string mode;
    std::string variant;
    int frame_index = 0;
    int frames_override = 0;

    auto* gen = app.add_subcommand("gen", "generate the train/val/test datasets");
    gen->add_option("--config", config_path, "config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--frames", frames_override, "override frames per scene for every split");

    auto* train = app.add_subcommand("train", "train one detector");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--method", method, "uncertainty method")
        ->required()
        ->check(CLI::IsMember({"none", "dm", "mbb", "doublem"}));
    train->add_option("--mode", mode, "collaboration mode")
        ->check(CLI::IsMember({"lb", "inter", "early"}));
    train->add_option("--variant", variant, "covariance head variant")
        ->check(CLI::IsMember({"img", "isg", "dmg"}));
    train->add_option("--out", out_dir, "artifact directory")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate trained artifacts on the test split");
    eval_cmd->add_option("--config", config_path, "config file")->required();
    eval_cmd->add_option("--artifacts", artifacts_dir, "artifact directory")->required();
    eval_cmd->add_option("--report", report_path, "report output path")->required();

    auto* viz = app.add_subcommand("viz", "render one test frame as SVG");
    viz->add_option("--config", config_path, "config file")->required();
    viz->add_option("--frame", frame_index, "test-split frame index")->required();
    viz->add_option("--artifacts", artifacts_dir, "artifact directory")->required();
    viz->add_option("--out", out_dir, "output SVG path")->required();
    viz->add_option("--method", method, "artifact method token")->default_val("doublem");
    viz->add_option("--mode", mode, "collaboration mode")
        ->check(CLI::IsMember({"lb", "inter", "early"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error[usage]: %s\n", e.what());
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_dir, frames_override);
        if (train->parsed()) return cmd_train(config_path, method, mode, variant, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(config_path, artifacts_dir, report_path);
        if (viz->parsed()) return cmd_viz(config_path, frame_index, artifacts_dir, out_dir, method, mode);
    } catch (const dmuq::Error& e) {
        std::fprintf(stderr, "error[%s]: %s\n", dmuq::to_string(e.category()), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error[internal]: %s\n", e.what());
        return 1;
    }
    return 0;
}
