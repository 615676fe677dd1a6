#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmuq/detector.hpp"
#include "dmuq/eval.hpp"

namespace dmuq {

// Bootstrap-loop settings.
struct DoubleMConfig {
    int block_length = 10;   // l
    int n_bootstraps = 4;    // N
    int refine_epochs = 5;   // epochs per bootstrap refinement
    double match_iou = 0.5;  // residual-harvest matching threshold
};

// Overlapping moving blocks: contiguous index windows of length l that
// never span scene boundaries. Each entry is the window's first position
// in the dataset's flat frame list.
struct BlockCollection {
    int total_frames = 0;  // K across all scenes
    int block_length = 0;  // l
    std::vector<int> starts;
};

// Per-scene windows [b, b+l-1]; raises a config error if l exceeds any
// scene's length.
BlockCollection build_blocks(const Dataset& dataset, int block_length);

// Draw M = floor(K/l) blocks uniformly with replacement; the concatenated
// frame indices keep each block's internal order.
std::vector<int> sample_bootstrap(const BlockCollection& blocks, Rng& rng);

// One harvested residual: corner residual e = y - y_hat in meters.
struct ResidualRecord {
    int iteration = 0;  // bootstrap iteration n (1-based)
    int frame = 0;      // position within the validation split
    int object = 0;     // ground-truth object id j
    int corner = 0;     // corner index i
    double ex = 0.0;
    double ey = 0.0;
};

// Output of a training driver: final parameters plus, for bootstrap
// methods, the uncertainty statistics and the residual log behind them.
struct TrainArtifacts {
    ModelParams params;
    std::optional<UQStats> stats;
    std::vector<ResidualRecord> residuals;
    std::vector<double> loss_trace;  // epoch means: pretrain then refinements
};

// Alias for the shared greedy matcher (residual harvesting and NLL use the
// same correspondence rule).
std::vector<std::pair<int, int>> match_detections(const std::vector<Detection>& detections,
                                                  const std::vector<GroundTruthBox>& gts,
                                                  double iou_threshold);

// Full bootstrap training loop: pretrain, then N resample/refine/validate
// iterations harvesting residuals and predicted covariances.
TrainArtifacts double_m_train(const Dataset& train_set, const Dataset& val_set,
                              const DoubleMConfig& dm_cfg, const DetectorConfig& det_cfg,
                              uint64_t seed, const std::string& run_tag);

// Baselines sharing the same plumbing: plain training with no uncertainty
// (none), direct covariance modeling only (dm), bootstrap-only with
// smooth-L1 regression (mbb).
TrainArtifacts run_none(const Dataset& train_set, const DetectorConfig& det_cfg, uint64_t seed,
                        const std::string& run_tag);
TrainArtifacts run_dm(const Dataset& train_set, const DetectorConfig& det_cfg, uint64_t seed,
                      const std::string& run_tag);
TrainArtifacts run_mbb(const Dataset& train_set, const Dataset& val_set,
                       const DoubleMConfig& dm_cfg, const DetectorConfig& det_cfg, uint64_t seed,
                       const std::string& run_tag);

// One inference pass; every corner covariance is replaced by
// combine_covariance(sigma_e, sigma_a, predicted); means, scores, and the
// detection count are untouched. Raises a usage error when the stats
// variant does not match the model's.
std::vector<Detection> double_m_infer(const Frame& frame, const ModelParams& params,
                                      const UQStats& stats, const DetectorConfig& cfg,
                                      const SceneConfig& scene);

// Statistics container IO ("DMUQST1"); bit-exact round-trip.
void write_uqstats(const std::string& path, const UQStats& stats);
UQStats read_uqstats(const std::string& path);

// Tabular residual export: one "n k j i ex ey" line per record.
void write_residual_log(const std::string& path, const std::vector<ResidualRecord>& records);

}  // namespace dmuq
