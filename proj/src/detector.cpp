#include "dmuq/detector.hpp"

#include <algorithm>
#include <cmath>

#include "dmuq/binio.hpp"
#include "dmuq/eval.hpp"

namespace dmuq {

const char* to_string(CollabMode m) {
    switch (m) {
        case CollabMode::LowerBound: return "lb";
        case CollabMode::Intermediate: return "inter";
        case CollabMode::EarlyUpperBound: return "early";
    }
    return "lb";
}

CollabMode collab_mode_from_string(const std::string& s) {
    if (s == "lb") return CollabMode::LowerBound;
    if (s == "inter") return CollabMode::Intermediate;
    if (s == "early") return CollabMode::EarlyUpperBound;
    raise(ErrorCategory::Config, "unknown collaboration mode '" + s + "'");
}

int cov_head_width(CovVariant v) {
    switch (v) {
        case CovVariant::None: return 0;
        case CovVariant::IMG: return kCorners * CholParams::raw_size(kBevDim);       // 12
        case CovVariant::ISG: return kCorners * kBevDim;                             // 8
        case CovVariant::DMG: return CholParams::raw_size(kCorners * kBevDim);       // 36
    }
    return 0;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::directory() const {
    std::vector<std::pair<std::string, Tensor>> dir = {
        {"enc1.w", enc1_w}, {"enc1.b", enc1_b}, {"enc2.w", enc2_w}, {"enc2.b", enc2_b},
        {"dec.w", dec_w},   {"dec.b", dec_b},   {"cls.w", cls_w},   {"cls.b", cls_b},
        {"reg.w", reg_w},   {"reg.b", reg_b},
    };
    if (variant != CovVariant::None) {
        dir.emplace_back("cov.w", cov_w);
        dir.emplace_back("cov.b", cov_b);
    }
    return dir;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : directory()) {
        (void)name;
        t.zero_grad();
    }
}

namespace {

Tensor he_conv(Rng& rng, int out_c, int in_c, int k) {
    const int fan_in = in_c * k * k;
    const double std = std::sqrt(2.0 / fan_in);
    std::vector<double> v(static_cast<size_t>(out_c) * in_c * k * k);
    for (auto& x : v) x = rng.normal() * std;
    return Tensor::param({out_c, in_c, k, k}, std::move(v));
}

// Output heads start near zero so the initial predictions are driven by the
// biases (background logit, centered corners, wide covariance prior); a hot
// random head makes the first SGD steps violently large.
Tensor head_conv(Rng& rng, int out_c, int in_c) {
    constexpr double kHeadStd = 0.01;
    std::vector<double> v(static_cast<size_t>(out_c) * in_c);
    for (auto& x : v) x = rng.normal() * kHeadStd;
    return Tensor::param({out_c, in_c, 1, 1}, std::move(v));
}

// Diagonal raw parameters start at 1 (a wide prior, std e ≈ 2.7 m);
// off-diagonal factors start at 0.
constexpr double kCovDiagRawInit = 1.0;

std::vector<double> cov_bias_init(CovVariant variant) {
    const int width = cov_head_width(variant);
    std::vector<double> b(static_cast<size_t>(width), 0.0);
    switch (variant) {
        case CovVariant::IMG:
            for (int i = 0; i < kCorners; ++i) {
                b[static_cast<size_t>(3 * i)] = kCovDiagRawInit;
                b[static_cast<size_t>(3 * i + 1)] = kCovDiagRawInit;
            }
            break;
        case CovVariant::ISG:
            std::fill(b.begin(), b.end(), kCovDiagRawInit);
            break;
        case CovVariant::DMG:
            for (int i = 0; i < kCorners * kBevDim; ++i)
                b[static_cast<size_t>(i)] = kCovDiagRawInit;
            break;
        case CovVariant::None: break;
    }
    return b;
}

}  // namespace

ModelParams init_model(CovVariant variant, Rng& rng) {
    constexpr int kDec = DetectorConfig::kDecoderWidth;
    ModelParams p;
    p.variant = variant;
    p.enc1_w = he_conv(rng, 8, 1, 3);
    p.enc1_b = Tensor::param({8}, std::vector<double>(8, 0.0));
    p.enc2_w = he_conv(rng, 16, 8, 3);
    p.enc2_b = Tensor::param({16}, std::vector<double>(16, 0.0));
    p.dec_w = he_conv(rng, kDec, 16, 3);
    p.dec_b = Tensor::param({kDec}, std::vector<double>(static_cast<size_t>(kDec), 0.0));
    p.cls_w = head_conv(rng, 1, kDec);
    // Negative starting bias: almost every cell is background.
    p.cls_b = Tensor::param({1}, {-2.0});
    p.reg_w = head_conv(rng, 8, kDec);
    p.reg_b = Tensor::param({8}, std::vector<double>(8, 0.0));
    if (variant != CovVariant::None) {
        const int width = cov_head_width(variant);
        p.cov_w = head_conv(rng, width, kDec);
        p.cov_b = Tensor::param({width}, cov_bias_init(variant));
    }
    return p;
}

Tensor encode(const BEVGrid& grid, const ModelParams& params) {
    if (grid.rows % DetectorConfig::kDownsample != 0 || grid.cols % DetectorConfig::kDownsample != 0)
        raise(ErrorCategory::Usage, "encode: grid dims must be divisible by the downsample factor");
    std::vector<double> v(grid.cells.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(grid.cells[i]);
    Tensor x = Tensor::constant({1, grid.rows, grid.cols}, std::move(v));
    Tensor f = relu(conv2d(x, params.enc1_w, params.enc1_b, 2, 1));
    return relu(conv2d(f, params.enc2_w, params.enc2_b, 2, 1));
}

Tensor aggregate(const std::vector<Tensor>& features, CollabMode mode, int ego) {
    if (features.empty()) raise(ErrorCategory::Usage, "aggregate: no feature maps");
    if (ego < 0 || ego >= static_cast<int>(features.size()))
        raise(ErrorCategory::Usage, "aggregate: missing ego feature map");
    switch (mode) {
        case CollabMode::LowerBound: return features[static_cast<size_t>(ego)];
        case CollabMode::Intermediate: return max_reduce(features);
        case CollabMode::EarlyUpperBound: return features[static_cast<size_t>(ego)];
    }
    return features[static_cast<size_t>(ego)];
}

RawOutputs decode_and_head(const Tensor& feature, const ModelParams& params) {
    Tensor d = relu(conv2d(feature, params.dec_w, params.dec_b, 1, 1));
    RawOutputs out;
    out.logits = conv2d(d, params.cls_w, params.cls_b, 1, 0);
    out.reg = conv2d(d, params.reg_w, params.reg_b, 1, 0);
    if (params.variant != CovVariant::None)
        out.cov = conv2d(d, params.cov_w, params.cov_b, 1, 0);
    out.h = out.logits.shape()[1];
    out.w = out.logits.shape()[2];
    return out;
}

RawOutputs forward_frame(const Frame& frame, const ModelParams& params, CollabMode mode) {
    if (frame.views.empty()) raise(ErrorCategory::Usage, "forward_frame: frame has no views");
    if (mode == CollabMode::EarlyUpperBound) {
        return decode_and_head(encode(fuse_early(frame.views), params), params);
    }
    if (mode == CollabMode::LowerBound) {
        return decode_and_head(encode(frame.views.front(), params), params);
    }
    std::vector<Tensor> features;
    features.reserve(frame.views.size());
    for (const auto& g : frame.views) features.push_back(encode(g, params));
    return decode_and_head(aggregate(features, mode, 0), params);
}

CellTargets assign_targets(const Frame& frame, int h, int w, double cell_size) {
    CellTargets t;
    t.cls.assign(static_cast<size_t>(h) * w, 0.0);
    t.box_index.assign(static_cast<size_t>(h) * w, -1);
    for (size_t b = 0; b < frame.boxes.size(); ++b) {
        const Vec2 c = frame.boxes[b].center();
        const int col = static_cast<int>(std::floor(c.x / cell_size));
        const int row = static_cast<int>(std::floor(c.y / cell_size));
        if (row < 0 || row >= h || col < 0 || col >= w) continue;
        const size_t cell = static_cast<size_t>(row) * w + col;
        if (t.box_index[cell] >= 0) {
            // Collision: keep the larger box.
            const auto& held = frame.boxes[static_cast<size_t>(t.box_index[cell])];
            if (frame.boxes[b].area() <= held.area()) continue;
        }
        t.box_index[cell] = static_cast<int>(b);
        t.cls[cell] = 1.0;
    }
    return t;
}

namespace {

// Decoded corner positions for one positive cell: absolute coordinates,
// bounded to ±2 decoder-cell widths around the cell center.
Tensor decode_cell_corners(const Tensor& reg, int row, int col, double cell_size) {
    const double cx = (col + 0.5) * cell_size;
    const double cy = (row + 0.5) * cell_size;
    std::vector<double> centers(static_cast<size_t>(kCorners * kBevDim));
    for (int i = 0; i < kCorners; ++i) {
        centers[static_cast<size_t>(2 * i)] = cx;
        centers[static_cast<size_t>(2 * i + 1)] = cy;
    }
    return affine(tanh_op(gather_cell(reg, row, col)), 2.0 * cell_size, centers);
}

std::vector<double> box_target(const GroundTruthBox& box, const Tensor& pred) {
    // The label's corner order carries semantics (rear-left first) that an
    // occupancy raster cannot show, so regression targets are paired by
    // geometry instead: canonicalize, then take the cyclic rotation closest
    // to the current prediction. Any fixed start corner is discontinuous in
    // box orientation and makes targets near the seam bimodal, which drags
    // corner estimates toward edge midpoints and shrinks the box.
    Quad corners = canonical_corners(box.corners);
    const std::vector<double>& p = pred.value();
    Quad pred_quad;
    for (int i = 0; i < kCorners; ++i)
        pred_quad[static_cast<size_t>(i)] = {p[static_cast<size_t>(2 * i)],
                                             p[static_cast<size_t>(2 * i + 1)]};
    corners = align_corner_order(corners, pred_quad);
    std::vector<double> t(static_cast<size_t>(kCorners * kBevDim));
    for (int i = 0; i < kCorners; ++i) {
        t[static_cast<size_t>(2 * i)] = corners[static_cast<size_t>(i)].x;
        t[static_cast<size_t>(2 * i + 1)] = corners[static_cast<size_t>(i)].y;
    }
    return t;
}

}  // namespace

Tensor detection_loss(const RawOutputs& raw, const Frame& frame, const ModelParams& params,
                      const SceneConfig& scene) {
    const double cell_size = scene.cell_size() * DetectorConfig::kDownsample;
    const CellTargets targets = assign_targets(frame, raw.h, raw.w, cell_size);

    Tensor loss = focal_loss(raw.logits, targets.cls);
    for (int row = 0; row < raw.h; ++row) {
        for (int col = 0; col < raw.w; ++col) {
            const int bi = targets.box_index[static_cast<size_t>(row) * raw.w + col];
            if (bi < 0) continue;
            const auto& box = frame.boxes[static_cast<size_t>(bi)];
            Tensor pred = decode_cell_corners(raw.reg, row, col, cell_size);
            const std::vector<double> target = box_target(box, pred);

            switch (params.variant) {
                case CovVariant::IMG: {
                    Tensor vcell = gather_cell(raw.cov, row, col);
                    for (int i = 0; i < kCorners; ++i) {
                        Tensor pred_i = slice(pred, 2 * i, 2);
                        Tensor raw_i = slice(vcell, 3 * i, 3);
                        const std::vector<double> t_i = {target[static_cast<size_t>(2 * i)],
                                                         target[static_cast<size_t>(2 * i + 1)]};
                        loss = add(loss, gaussian_kl_loss(pred_i, t_i, raw_i));
                    }
                    break;
                }
                case CovVariant::ISG: {
                    Tensor vcell = gather_cell(raw.cov, row, col);
                    for (int k = 0; k < kCorners * kBevDim; ++k) {
                        Tensor pred_k = slice(pred, k, 1);
                        Tensor raw_k = slice(vcell, k, 1);
                        loss = add(loss, gaussian_kl_loss(pred_k, {target[static_cast<size_t>(k)]},
                                                          raw_k));
                    }
                    break;
                }
                case CovVariant::DMG: {
                    Tensor vcell = gather_cell(raw.cov, row, col);
                    loss = add(loss, gaussian_kl_loss(pred, target, vcell));
                    break;
                }
                case CovVariant::None:
                    loss = add(loss, smooth_l1(pred, target, scene.cell_size()));
                    break;
            }
        }
    }
    return loss;
}

TrainResult train(const Dataset& dataset, ModelParams& params, int epochs, double lr,
                  double momentum, Rng& batch_rng, const SceneConfig& scene,
                  CollabMode mode, const std::vector<int>& frame_indices) {
    if (dataset.frames.empty()) raise(ErrorCategory::Training, "train: empty dataset");

    std::vector<int> base = frame_indices;
    if (base.empty()) {
        base.resize(dataset.frames.size());
        for (size_t i = 0; i < base.size(); ++i) base[i] = static_cast<int>(i);
    }

    auto dir = params.directory();
    std::vector<std::vector<double>> velocity(dir.size());
    for (size_t i = 0; i < dir.size(); ++i)
        velocity[i].assign(dir[i].second.value().size(), 0.0);

    TrainResult result;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<int> order = base;
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[batch_rng.uniform_int(i)]);

        double total = 0.0;
        for (int fi : order) {
            const Frame& frame = dataset.frames[static_cast<size_t>(fi)];
            RawOutputs raw = forward_frame(frame, params, mode);
            Tensor loss = detection_loss(raw, frame, params, scene);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                raise(ErrorCategory::Training,
                      "train: loss diverged at epoch " + std::to_string(epoch) + ", frame " +
                          std::to_string(fi));
            total += lv;

            params.zero_grad();
            loss.backward();
            for (size_t i = 0; i < dir.size(); ++i) {
                Tensor& p = dir[i].second;
                if (!p.has_grad()) continue;
                auto& value = p.value();
                const auto& grad = p.grad();
                auto& vel = velocity[i];
                for (size_t j = 0; j < value.size(); ++j) {
                    vel[j] = momentum * vel[j] + grad[j];
                    value[j] -= lr * vel[j];
                }
            }
        }
        result.epoch_loss.push_back(total / static_cast<double>(order.size()));
    }
    return result;
}

std::vector<Detection> detect(const Frame& frame, const ModelParams& params,
                              const DetectorConfig& cfg, const SceneConfig& scene) {
    NoGradGuard no_grad;
    RawOutputs raw = forward_frame(frame, params, cfg.mode);
    const double cell_size = scene.cell_size() * DetectorConfig::kDownsample;

    const auto& logits = raw.logits.value();
    const auto& reg = raw.reg.value();
    const int h = raw.h, w = raw.w;

    std::vector<Detection> candidates;
    for (int row = 0; row < h; ++row) {
        for (int col = 0; col < w; ++col) {
            const double logit = logits[static_cast<size_t>(row) * w + col];
            const double score = 1.0 / (1.0 + std::exp(-logit));
            if (score < cfg.score_threshold) continue;

            Detection det;
            det.score = score;
            det.cell = row * w + col;
            const double cx = (col + 0.5) * cell_size;
            const double cy = (row + 0.5) * cell_size;
            std::vector<double> coords(static_cast<size_t>(kCorners * kBevDim));
            for (int i = 0; i < kCorners; ++i) {
                const size_t off = (static_cast<size_t>(2 * i) * h + row) * w + col;
                const size_t off_y = (static_cast<size_t>(2 * i + 1) * h + row) * w + col;
                const double x = cx + 2.0 * cell_size * std::tanh(reg[off]);
                const double y = cy + 2.0 * cell_size * std::tanh(reg[off_y]);
                det.corners[static_cast<size_t>(i)] = {x, y};
                coords[static_cast<size_t>(2 * i)] = x;
                coords[static_cast<size_t>(2 * i + 1)] = y;
            }
            // Skip degenerate or non-convex decodes; they cannot be boxes.
            if (std::abs(signed_area(det.corners)) < 1e-6 || !is_convex_quad(det.corners))
                continue;

            det.uncertainty.variant = params.variant;
            if (params.variant != CovVariant::None) {
                const auto& cov = raw.cov.value();
                auto cov_at = [&](int ch) {
                    return cov[(static_cast<size_t>(ch) * h + row) * w + col];
                };
                switch (params.variant) {
                    case CovVariant::IMG:
                        for (int i = 0; i < kCorners; ++i) {
                            CholParams cp(kBevDim, {cov_at(3 * i), cov_at(3 * i + 1),
                                                    cov_at(3 * i + 2)});
                            CornerGaussian g;
                            g.mean = {coords[static_cast<size_t>(2 * i)],
                                      coords[static_cast<size_t>(2 * i + 1)]};
                            g.cov = cholesky_reconstruct(cp);
                            det.uncertainty.corners.push_back(std::move(g));
                        }
                        break;
                    case CovVariant::ISG:
                        for (int k = 0; k < kCorners * kBevDim; ++k) {
                            const double u =
                                std::clamp(cov_at(k), -kCholDiagClamp, kCholDiagClamp);
                            det.uncertainty.variances.push_back(std::exp(2.0 * u));
                        }
                        break;
                    case CovVariant::DMG: {
                        std::vector<double> rawp(static_cast<size_t>(cov_head_width(CovVariant::DMG)));
                        for (size_t k = 0; k < rawp.size(); ++k) rawp[k] = cov_at(static_cast<int>(k));
                        det.uncertainty.joint_mean = coords;
                        det.uncertainty.joint_cov =
                            cholesky_reconstruct(CholParams(kCorners * kBevDim, std::move(rawp)));
                        break;
                    }
                    case CovVariant::None: break;
                }
            }
            candidates.push_back(std::move(det));
        }
    }

    // Greedy NMS by descending score (cell index breaks ties).
    std::vector<size_t> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (candidates[a].score != candidates[b].score)
            return candidates[a].score > candidates[b].score;
        return candidates[a].cell < candidates[b].cell;
    });
    std::vector<Detection> kept;
    for (size_t idx : order) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (quad_iou(candidates[idx].corners, k.corners) > cfg.nms_iou) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(candidates[idx]);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

void write_checkpoint(const std::string& path, const ModelParams& params) {
    BinWriter w(path);
    w.magic("DMUQCP1");
    w.u32(static_cast<uint32_t>(params.variant));
    w.u32(1);  // classification head width
    w.u32(static_cast<uint32_t>(kCorners * kBevDim));
    w.u32(static_cast<uint32_t>(cov_head_width(params.variant)));

    const auto dir = params.directory();
    w.u32(static_cast<uint32_t>(dir.size()));
    for (const auto& [name, t] : dir) {
        w.str(name);
        const auto& shape = t.shape();
        w.u32(static_cast<uint32_t>(shape.size()));
        for (int d : shape) w.u32(static_cast<uint32_t>(d));
    }
    for (const auto& [name, t] : dir) {
        (void)name;
        w.f64s(t.value());
    }
    w.close();
}

ModelParams read_checkpoint(const std::string& path) {
    BinReader r(path);
    r.magic("DMUQCP1");
    const auto variant = static_cast<CovVariant>(r.u32());
    const uint32_t cls_width = r.u32();
    const uint32_t reg_width = r.u32();
    const uint32_t cov_width = r.u32();
    if (cls_width != 1 || reg_width != static_cast<uint32_t>(kCorners * kBevDim) ||
        cov_width != static_cast<uint32_t>(cov_head_width(variant)))
        raise(ErrorCategory::Io, "checkpoint head widths are inconsistent with the variant");

    const uint32_t n_entries = r.u32();
    std::vector<std::pair<std::string, std::vector<int>>> entries;
    for (uint32_t i = 0; i < n_entries; ++i) {
        std::string name = r.str();
        const uint32_t rank = r.u32();
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
        entries.emplace_back(std::move(name), std::move(shape));
    }

    ModelParams p;
    p.variant = variant;
    for (const auto& [name, shape] : entries) {
        int n = 1;
        for (int d : shape) n *= d;
        Tensor t = Tensor::param(shape, r.f64s(static_cast<size_t>(n)));
        if (name == "enc1.w") p.enc1_w = t;
        else if (name == "enc1.b") p.enc1_b = t;
        else if (name == "enc2.w") p.enc2_w = t;
        else if (name == "enc2.b") p.enc2_b = t;
        else if (name == "dec.w") p.dec_w = t;
        else if (name == "dec.b") p.dec_b = t;
        else if (name == "cls.w") p.cls_w = t;
        else if (name == "cls.b") p.cls_b = t;
        else if (name == "reg.w") p.reg_w = t;
        else if (name == "reg.b") p.reg_b = t;
        else if (name == "cov.w") p.cov_w = t;
        else if (name == "cov.b") p.cov_b = t;
        else raise(ErrorCategory::Io, "checkpoint contains unknown tensor '" + name + "'");
    }
    return p;
}

}  // namespace dmuq
