#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dmuq/distributions.hpp"
#include "dmuq/scenegen.hpp"
#include "dmuq/tensor.hpp"

namespace dmuq {

// How agents share information before decoding.
enum class CollabMode : int { LowerBound = 0, Intermediate = 1, EarlyUpperBound = 2 };

const char* to_string(CollabMode m);
CollabMode collab_mode_from_string(const std::string& s);

// Architecture and optimization settings for the toy detector.
struct DetectorConfig {
    CovVariant variant = CovVariant::IMG;
    CollabMode mode = CollabMode::Intermediate;
    double lr = 1e-2;
    double momentum = 0.9;
    int pretrain_epochs = 30;
    double score_threshold = 0.3;
    double nms_iou = 0.3;

    static constexpr int kDownsample = 4;    // K_m: two stride-2 encoder convs
    static constexpr int kFeatureDim = 16;   // F_m
    static constexpr int kDecoderWidth = 32; // decoder conv channels feeding the heads
};

// Width of the covariance head for a variant (0 when absent).
int cov_head_width(CovVariant v);

// Learned parameters with a stable name/shape directory (checkpoint order).
struct ModelParams {
    CovVariant variant = CovVariant::None;
    Tensor enc1_w, enc1_b;  // 1->8, 3x3, stride 2
    Tensor enc2_w, enc2_b;  // 8->16, 3x3, stride 2
    Tensor dec_w, dec_b;    // 16->16, 3x3, stride 1
    Tensor cls_w, cls_b;    // 1x1 head: 1 logit per cell
    Tensor reg_w, reg_b;    // 1x1 head: 8 corner offsets per cell
    Tensor cov_w, cov_b;    // 1x1 head: variant-dependent width; undefined for None

    std::vector<std::pair<std::string, Tensor>> directory() const;
    void zero_grad();
};

// He-initialized model; classification bias starts negative (sparse
// positives), covariance diagonal raws start at 1 (wide prior).
ModelParams init_model(CovVariant variant, Rng& rng);

// Per-cell raw head outputs for one frame.
struct RawOutputs {
    Tensor logits;  // {1,h,w}
    Tensor reg;     // {8,h,w}
    Tensor cov;     // {width,h,w}; undefined for variant None
    int h = 0;
    int w = 0;
};

struct Detection {
    double score = 0.0;
    Quad corners;
    BoxUncertainty uncertainty;
    int cell = -1;  // source cell index (row-major)
};

// Encoder E: binary occupancy raster -> downsampled feature map.
Tensor encode(const BEVGrid& grid, const ModelParams& params);

// Collaboration: LowerBound keeps the ego map; Intermediate fuses all maps
// elementwise-max; EarlyUpperBound grids are fused before encode, so the
// single encoded map passes through unchanged.
Tensor aggregate(const std::vector<Tensor>& features, CollabMode mode, int ego);

// Decoder D plus the three 1x1 heads.
RawOutputs decode_and_head(const Tensor& feature, const ModelParams& params);

// Mode-aware forward pass over one frame's views.
RawOutputs forward_frame(const Frame& frame, const ModelParams& params, CollabMode mode);

// Cell targets: a cell is positive iff a ground-truth center falls in it;
// collisions keep the larger-area box.
struct CellTargets {
    std::vector<double> cls;       // h*w entries in {0,1}
    std::vector<int> box_index;    // h*w entries; -1 for negatives
};
CellTargets assign_targets(const Frame& frame, int h, int w, double cell_size);

// Focal classification over every cell plus per-corner regression loss at
// positive cells (KL form for IMG/ISG/DMG; smooth-L1 for variant None).
Tensor detection_loss(const RawOutputs& raw, const Frame& frame, const ModelParams& params,
                      const SceneConfig& scene);

struct TrainResult {
    std::vector<double> epoch_loss;  // mean per-frame loss per epoch
};

// Plain SGD with momentum over per-frame batches in seeded shuffled order.
// `frame_indices` selects (with repetition allowed) the frames to train on;
// empty means the whole dataset.
TrainResult train(const Dataset& dataset, ModelParams& params, int epochs, double lr,
                  double momentum, Rng& batch_rng, const SceneConfig& scene,
                  CollabMode mode, const std::vector<int>& frame_indices = {});

// Inference: threshold scores, decode corners, greedy NMS on rotated IoU.
std::vector<Detection> detect(const Frame& frame, const ModelParams& params,
                              const DetectorConfig& cfg, const SceneConfig& scene);

// Checkpoint IO ("DMUQCP1"); bit-exact round-trip.
void write_checkpoint(const std::string& path, const ModelParams& params);
ModelParams read_checkpoint(const std::string& path);

}  // namespace dmuq
