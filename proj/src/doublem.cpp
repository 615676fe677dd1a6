#include "dmuq/doublem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "dmuq/binio.hpp"

namespace dmuq {

BlockCollection build_blocks(const Dataset& dataset, int block_length) {
    if (block_length < 1) raise(ErrorCategory::Config, "block length must be >= 1");
    BlockCollection bc;
    bc.total_frames = static_cast<int>(dataset.frames.size());
    bc.block_length = block_length;

    int scene_start = 0;
    while (scene_start < bc.total_frames) {
        const int scene_id = dataset.frames[static_cast<size_t>(scene_start)].scene_id;
        int scene_end = scene_start;
        while (scene_end < bc.total_frames &&
               dataset.frames[static_cast<size_t>(scene_end)].scene_id == scene_id)
            ++scene_end;
        const int scene_len = scene_end - scene_start;
        if (block_length > scene_len)
            raise(ErrorCategory::Config, "block length " + std::to_string(block_length) +
                                             " exceeds scene length " + std::to_string(scene_len));
        for (int b = 0; b + block_length <= scene_len; ++b) bc.starts.push_back(scene_start + b);
        scene_start = scene_end;
    }
    return bc;
}

std::vector<int> sample_bootstrap(const BlockCollection& blocks, Rng& rng) {
    if (blocks.starts.empty()) raise(ErrorCategory::Usage, "sample_bootstrap: empty block collection");
    const int m = blocks.total_frames / blocks.block_length;  // M = floor(K/l)
    std::vector<int> frames;
    frames.reserve(static_cast<size_t>(m) * blocks.block_length);
    for (int i = 0; i < m; ++i) {
        const int start =
            blocks.starts[rng.uniform_int(static_cast<uint64_t>(blocks.starts.size()))];
        for (int j = 0; j < blocks.block_length; ++j) frames.push_back(start + j);
    }
    return frames;
}

std::vector<std::pair<int, int>> match_detections(const std::vector<Detection>& detections,
                                                  const std::vector<GroundTruthBox>& gts,
                                                  double iou_threshold) {
    return match_boxes(detections, gts, iou_threshold);
}

namespace {

struct HarvestPools {
    std::vector<CovMatrix> predicted;                 // variant dimensionality
    std::vector<std::vector<double>> residual_vecs;   // variant dimensionality
};

// Validation pass for iteration n: match detections to ground truth,
// append residual records and predicted covariances.
void harvest_validation(const Dataset& val_set, const ModelParams& params,
                        const DetectorConfig& det_cfg, const DoubleMConfig& dm_cfg,
                        int iteration, std::vector<ResidualRecord>& log, HarvestPools& pools) {
    const SceneConfig& scene = val_set.config;
    for (size_t fi = 0; fi < val_set.frames.size(); ++fi) {
        const Frame& frame = val_set.frames[fi];
        const auto dets = detect(frame, params, det_cfg, scene);
        const auto pairs = match_detections(dets, frame.boxes, dm_cfg.match_iou);
        for (const auto& [di, gi] : pairs) {
            const Detection& det = dets[static_cast<size_t>(di)];
            const GroundTruthBox& gt = frame.boxes[static_cast<size_t>(gi)];
            // Pair corners the same way training does: by the cyclic
            // rotation of the labeled quad closest to the detection.
            const Quad gt_corners =
                align_corner_order(canonical_corners(gt.corners), det.corners);

            std::vector<double> joint_residual;
            for (int i = 0; i < kCorners; ++i) {
                const Vec2 e = gt_corners[static_cast<size_t>(i)] - det.corners[static_cast<size_t>(i)];
                ResidualRecord rec;
                rec.iteration = iteration;
                rec.frame = static_cast<int>(fi);
                rec.object = gt.object_id;
                rec.corner = i;
                rec.ex = e.x;
                rec.ey = e.y;
                log.push_back(rec);

                switch (params.variant) {
                    case CovVariant::IMG:
                        pools.residual_vecs.push_back({e.x, e.y});
                        pools.predicted.push_back(
                            det.uncertainty.corners[static_cast<size_t>(i)].cov);
                        break;
                    case CovVariant::ISG: {
                        pools.residual_vecs.push_back({e.x, e.y});
                        CovMatrix c(2);
                        c.at(0, 0) = det.uncertainty.variances[static_cast<size_t>(2 * i)];
                        c.at(1, 1) = det.uncertainty.variances[static_cast<size_t>(2 * i + 1)];
                        pools.predicted.push_back(c);
                        break;
                    }
                    case CovVariant::DMG:
                        joint_residual.push_back(e.x);
                        joint_residual.push_back(e.y);
                        break;
                    case CovVariant::None:
                        pools.residual_vecs.push_back({e.x, e.y});
                        break;
                }
            }
            if (params.variant == CovVariant::DMG) {
                pools.residual_vecs.push_back(std::move(joint_residual));
                pools.predicted.push_back(det.uncertainty.joint_cov);
            }
        }
    }
}

UQStats finish_stats(const HarvestPools& pools, CovVariant variant, const DoubleMConfig& dm_cfg) {
    if (pools.residual_vecs.empty())
        raise(ErrorCategory::Estimation,
              "no validation detections matched ground truth; cannot estimate uncertainty");
    UQStats stats;
    stats.variant = variant;
    stats.block_length = dm_cfg.block_length;
    stats.n_bootstraps = dm_cfg.n_bootstraps;
    stats.n_residuals = static_cast<int>(pools.residual_vecs.size());
    stats.sigma_e = estimate_sigma_e(pools.residual_vecs);
    if (variant == CovVariant::None) {
        stats.sigma_a = CovMatrix::zero(stats.sigma_e.dim());
    } else {
        stats.sigma_a = estimate_sigma_a(pools.predicted);
    }
    if (variant == CovVariant::ISG) {
        // Per-dimension scalars only: drop the cross-dimension terms.
        stats.sigma_e.at(0, 1) = 0.0;
        stats.sigma_e.at(1, 0) = 0.0;
    }
    return stats;
}

std::string stream(const char* kind, const std::string& tag, CollabMode mode) {
    return std::string(kind) + "/" + tag + "/" + to_string(mode);
}

TrainArtifacts bootstrap_loop(const Dataset& train_set, const Dataset& val_set,
                              const DoubleMConfig& dm_cfg, const DetectorConfig& det_cfg,
                              uint64_t seed, const std::string& run_tag) {
    if (val_set.frames.empty())
        raise(ErrorCategory::Config, "bootstrap training requires a non-empty validation set");

    Rng init_rng(seed, stream("init", run_tag, det_cfg.mode));
    Rng batch_rng(seed, stream("batch", run_tag, det_cfg.mode));
    Rng boot_rng(seed, stream("bootstrap", run_tag, det_cfg.mode));

    TrainArtifacts art;
    art.params = init_model(det_cfg.variant, init_rng);

    auto pre = train(train_set, art.params, det_cfg.pretrain_epochs, det_cfg.lr,
                     det_cfg.momentum, batch_rng, train_set.config, det_cfg.mode);
    art.loss_trace = pre.epoch_loss;

    const BlockCollection blocks = build_blocks(train_set, dm_cfg.block_length);
    HarvestPools pools;
    for (int n = 1; n <= dm_cfg.n_bootstraps; ++n) {
        const auto resampled = sample_bootstrap(blocks, boot_rng);
        auto refine = train(train_set, art.params, dm_cfg.refine_epochs, 0.1 * det_cfg.lr,
                            det_cfg.momentum, batch_rng, train_set.config, det_cfg.mode,
                            resampled);
        art.loss_trace.insert(art.loss_trace.end(), refine.epoch_loss.begin(),
                              refine.epoch_loss.end());
        harvest_validation(val_set, art.params, det_cfg, dm_cfg, n, art.residuals, pools);
    }
    art.stats = finish_stats(pools, det_cfg.variant, dm_cfg);
    return art;
}

}  // namespace

TrainArtifacts double_m_train(const Dataset& train_set, const Dataset& val_set,
                              const DoubleMConfig& dm_cfg, const DetectorConfig& det_cfg,
                              uint64_t seed, const std::string& run_tag) {
    if (det_cfg.variant == CovVariant::None)
        raise(ErrorCategory::Config, "double-m training needs a covariance head variant");
    return bootstrap_loop(train_set, val_set, dm_cfg, det_cfg, seed, run_tag);
}

TrainArtifacts run_none(const Dataset& train_set, const DetectorConfig& det_cfg, uint64_t seed,
                        const std::string& run_tag) {
    DetectorConfig cfg = det_cfg;
    cfg.variant = CovVariant::None;
    Rng init_rng(seed, stream("init", run_tag, cfg.mode));
    Rng batch_rng(seed, stream("batch", run_tag, cfg.mode));

    TrainArtifacts art;
    art.params = init_model(cfg.variant, init_rng);
    auto pre = train(train_set, art.params, cfg.pretrain_epochs, cfg.lr, cfg.momentum, batch_rng,
                     train_set.config, cfg.mode);
    art.loss_trace = pre.epoch_loss;
    return art;
}

TrainArtifacts run_dm(const Dataset& train_set, const DetectorConfig& det_cfg, uint64_t seed,
                      const std::string& run_tag) {
    if (det_cfg.variant == CovVariant::None)
        raise(ErrorCategory::Config, "direct modeling needs a covariance head variant");
    Rng init_rng(seed, stream("init", run_tag, det_cfg.mode));
    Rng batch_rng(seed, stream("batch", run_tag, det_cfg.mode));

    TrainArtifacts art;
    art.params = init_model(det_cfg.variant, init_rng);
    auto pre = train(train_set, art.params, det_cfg.pretrain_epochs, det_cfg.lr, det_cfg.momentum,
                     batch_rng, train_set.config, det_cfg.mode);
    art.loss_trace = pre.epoch_loss;
    return art;
}

TrainArtifacts run_mbb(const Dataset& train_set, const Dataset& val_set,
                       const DoubleMConfig& dm_cfg, const DetectorConfig& det_cfg, uint64_t seed,
                       const std::string& run_tag) {
    DetectorConfig cfg = det_cfg;
    cfg.variant = CovVariant::None;  // smooth-L1 regression, no covariance head
    return bootstrap_loop(train_set, val_set, dm_cfg, cfg, seed, run_tag);
}

std::vector<Detection> double_m_infer(const Frame& frame, const ModelParams& params,
                                      const UQStats& stats, const DetectorConfig& cfg,
                                      const SceneConfig& scene) {
    if (stats.variant != params.variant)
        raise(ErrorCategory::Usage, "uncertainty statistics variant does not match the model");

    std::vector<Detection> dets = detect(frame, params, cfg, scene);
    for (auto& det : dets) {
        switch (params.variant) {
            case CovVariant::IMG:
                for (auto& corner : det.uncertainty.corners)
                    corner.cov = combine_covariance(stats.sigma_e, stats.sigma_a, corner.cov);
                break;
            case CovVariant::ISG:
                for (size_t k = 0; k < det.uncertainty.variances.size(); ++k) {
                    const int d = static_cast<int>(k) % kBevDim;
                    det.uncertainty.variances[k] = stats.sigma_e.at(d, d) +
                                                   0.5 * stats.sigma_a.at(d, d) +
                                                   0.5 * det.uncertainty.variances[k];
                }
                break;
            case CovVariant::DMG:
                det.uncertainty.joint_cov =
                    combine_covariance(stats.sigma_e, stats.sigma_a, det.uncertainty.joint_cov);
                break;
            case CovVariant::None: {
                // Bootstrap-only: every corner carries the same epistemic
                // covariance, exposed in per-corner form for scoring.
                det.uncertainty.variant = CovVariant::IMG;
                det.uncertainty.corners.clear();
                for (int i = 0; i < kCorners; ++i) {
                    CornerGaussian g;
                    g.mean = {det.corners[static_cast<size_t>(i)].x,
                              det.corners[static_cast<size_t>(i)].y};
                    g.cov = stats.sigma_e;
                    det.uncertainty.corners.push_back(std::move(g));
                }
                break;
            }
        }
    }
    return dets;
}

// ---------------------------------------------------------------------------
// Statistics container and residual log IO
// ---------------------------------------------------------------------------

namespace {

int stats_dim(CovVariant v) { return v == CovVariant::DMG ? kCorners * kBevDim : kBevDim; }

}  // namespace

void write_uqstats(const std::string& path, const UQStats& stats) {
    BinWriter w(path);
    w.magic("DMUQST1");
    w.u32(static_cast<uint32_t>(stats.variant));
    w.u32(static_cast<uint32_t>(stats.block_length));
    w.u32(static_cast<uint32_t>(stats.n_bootstraps));
    w.u32(static_cast<uint32_t>(stats.n_residuals));
    w.f64s(stats.sigma_a.data());
    w.f64s(stats.sigma_e.data());
    w.close();
}

UQStats read_uqstats(const std::string& path) {
    BinReader r(path);
    r.magic("DMUQST1");
    UQStats stats;
    stats.variant = static_cast<CovVariant>(r.u32());
    stats.block_length = static_cast<int>(r.u32());
    stats.n_bootstraps = static_cast<int>(r.u32());
    stats.n_residuals = static_cast<int>(r.u32());
    const int d = stats_dim(stats.variant);
    stats.sigma_a = CovMatrix(d);
    stats.sigma_a.data() = r.f64s(static_cast<size_t>(d) * d);
    stats.sigma_e = CovMatrix(d);
    stats.sigma_e.data() = r.f64s(static_cast<size_t>(d) * d);
    return stats;
}

void write_residual_log(const std::string& path, const std::vector<ResidualRecord>& records) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    std::fprintf(f, "# n k j i ex ey\n");
    for (const auto& r : records)
        std::fprintf(f, "%d %d %d %d %.17g %.17g\n", r.iteration, r.frame, r.object, r.corner,
                     r.ex, r.ey);
    std::fclose(f);
}

}  // namespace dmuq
