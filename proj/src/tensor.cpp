#include "dmuq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dmuq/matrix.hpp"

namespace dmuq {

namespace {
thread_local bool g_grad_enabled = true;

int shape_numel(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) raise(ErrorCategory::Usage, "tensor shape dimensions must be positive");
        n *= d;
    }
    return n;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow.
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on demand during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

using detail::TensorNode;

namespace {

std::shared_ptr<TensorNode> make_leaf(std::vector<int> shape, std::vector<double> values,
                                      bool requires_grad) {
    int n = shape_numel(shape);
    if (static_cast<int>(values.size()) != n)
        raise(ErrorCategory::Usage, "tensor value count does not match shape");
    for (double v : values)
        if (!std::isfinite(v))
            raise(ErrorCategory::InvalidParameter, "tensor initialized with non-finite value");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

// Create an op output node; graph links recorded only in grad mode.
std::shared_ptr<TensorNode> make_op(std::vector<int> shape, std::vector<double> values,
                                    std::vector<std::shared_ptr<TensorNode>> parents,
                                    std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (g_grad_enabled && any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

const TensorNode& need(const Tensor& t, const char* op) {
    if (!t.defined()) raise(ErrorCategory::Usage, std::string(op) + ": undefined tensor");
    return *t.node();
}

void check_same_shape(const TensorNode& a, const TensorNode& b, const char* op) {
    if (a.shape != b.shape) raise(ErrorCategory::Usage, std::string(op) + ": shape mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor methods
// ---------------------------------------------------------------------------

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::param(std::vector<int> shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

const std::vector<int>& Tensor::shape() const { return need(*this, "shape").shape; }

int Tensor::numel() const { return static_cast<int>(need(*this, "numel").value.size()); }

bool Tensor::requires_grad() const { return need(*this, "requires_grad").requires_grad; }

const std::vector<double>& Tensor::value() const { return need(*this, "value").value; }

std::vector<double>& Tensor::value() {
    need(*this, "value");
    return node_->value;
}

bool Tensor::has_grad() const { return !need(*this, "grad").grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    const auto& n = need(*this, "grad");
    if (n.grad.empty()) raise(ErrorCategory::Usage, "grad: no gradient has been computed");
    return n.grad;
}

void Tensor::zero_grad() {
    auto& n = need(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    (void)n;
}

double Tensor::item() const {
    const auto& n = need(*this, "item");
    if (n.value.size() != 1) raise(ErrorCategory::Usage, "item: tensor is not scalar");
    return n.value[0];
}

void Tensor::backward() const {
    const auto& root = need(*this, "backward");
    if (root.value.size() != 1)
        raise(ErrorCategory::Usage, "backward: root tensor must be scalar");
    if (!root.requires_grad) return;  // nothing reachable requires gradients

    // Topological order (parents before children) via iterative post-order DFS
    // over gradient-requiring nodes; each node enters the list exactly once.
    std::vector<std::shared_ptr<TensorNode>> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        std::shared_ptr<TensorNode> node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_, 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            auto p = f.node->parents[f.next_parent++];
            if (p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.push_back({std::move(p), 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (auto& n : order) n->ensure_grad();
    node_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
    const auto& xn = need(x, name);
    std::vector<double> out(xn.value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xn.value[i]);
    auto xp = x.node();
    return Tensor(make_op(xn.shape, std::move(out), {xp}, [xp, bwd](TensorNode& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            xp->grad[i] += self.grad[i] * bwd(xp->value[i], self.value[i]);
    }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& an = need(a, "add");
    const auto& bn = need(b, "add");
    check_same_shape(an, bn, "add");
    std::vector<double> out(an.value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] + bn.value[i];
    auto ap = a.node(), bp = b.node();
    return Tensor(make_op(an.shape, std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] += self.grad[i];
        }
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto& an = need(a, "sub");
    const auto& bn = need(b, "sub");
    check_same_shape(an, bn, "sub");
    std::vector<double> out(an.value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] - bn.value[i];
    auto ap = a.node(), bp = b.node();
    return Tensor(make_op(an.shape, std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] -= self.grad[i];
        }
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& an = need(a, "mul");
    const auto& bn = need(b, "mul");
    check_same_shape(an, bn, "mul");
    std::vector<double> out(an.value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] * bn.value[i];
    auto ap = a.node(), bp = b.node();
    return Tensor(make_op(an.shape, std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                ap->grad[i] += self.grad[i] * bp->value[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bp->grad[i] += self.grad[i] * ap->value[i];
        }
    }));
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    const auto& an = need(a, "maximum");
    const auto& bn = need(b, "maximum");
    check_same_shape(an, bn, "maximum");
    std::vector<double> out(an.value.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(an.value[i], bn.value[i]);
    auto ap = a.node(), bp = b.node();
    return Tensor(make_op(an.shape, std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) ap->ensure_grad();
        if (bp->requires_grad) bp->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (ap->value[i] >= bp->value[i]) {
                if (ap->requires_grad) ap->grad[i] += self.grad[i];
            } else if (bp->requires_grad) {
                bp->grad[i] += self.grad[i];
            }
        }
    }));
}

Tensor max_reduce(const std::vector<Tensor>& xs) {
    if (xs.empty()) raise(ErrorCategory::Usage, "max_reduce: empty input list");
    Tensor acc = xs.front();
    for (size_t i = 1; i < xs.size(); ++i) acc = maximum(acc, xs[i]);
    return acc;
}

Tensor affine(const Tensor& x, double a, const std::vector<double>& b) {
    const auto& xn = need(x, "affine");
    if (!b.empty() && b.size() != xn.value.size())
        raise(ErrorCategory::Usage, "affine: offset size mismatch");
    std::vector<double> out(xn.value.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = a * xn.value[i] + (b.empty() ? 0.0 : b[i]);
    auto xp = x.node();
    return Tensor(make_op(xn.shape, std::move(out), {xp}, [xp, a](TensorNode& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += a * self.grad[i];
    }));
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, {}); }

Tensor relu(const Tensor& x) {
    return unary_op(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, "sigmoid", [](double v) { return stable_sigmoid(v); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
    return unary_op(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& x) {
    return unary_op(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sum(const Tensor& x) {
    const auto& xn = need(x, "sum");
    double acc = 0.0;
    for (double v : xn.value) acc += v;
    auto xp = x.node();
    return Tensor(make_op({1}, {acc}, {xp}, [xp](TensorNode& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        double g = self.grad[0];
        for (double& gi : xp->grad) gi += g;
    }));
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const auto& xn = need(x, "linear");
    const auto& wn = need(w, "linear");
    const auto& bn = need(b, "linear");
    if (wn.shape.size() != 2) raise(ErrorCategory::Usage, "linear: weight must be rank 2");
    const int out_dim = wn.shape[0];
    const int in_dim = wn.shape[1];
    if (static_cast<int>(xn.value.size()) != in_dim)
        raise(ErrorCategory::Usage, "linear: input size mismatch");
    if (static_cast<int>(bn.value.size()) != out_dim)
        raise(ErrorCategory::Usage, "linear: bias size mismatch");

    std::vector<double> out(static_cast<size_t>(out_dim));
    for (int o = 0; o < out_dim; ++o) {
        double acc = bn.value[static_cast<size_t>(o)];
        const double* wr = wn.value.data() + static_cast<size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) acc += wr[i] * xn.value[static_cast<size_t>(i)];
        out[static_cast<size_t>(o)] = acc;
    }
    auto xp = x.node(), wp = w.node(), bp = b.node();
    return Tensor(make_op({out_dim}, std::move(out), {xp, wp, bp},
                          [xp, wp, bp, out_dim, in_dim](TensorNode& self) {
                              if (bp->requires_grad) {
                                  bp->ensure_grad();
                                  for (int o = 0; o < out_dim; ++o)
                                      bp->grad[static_cast<size_t>(o)] +=
                                          self.grad[static_cast<size_t>(o)];
                              }
                              if (wp->requires_grad) {
                                  wp->ensure_grad();
                                  for (int o = 0; o < out_dim; ++o) {
                                      double g = self.grad[static_cast<size_t>(o)];
                                      double* wg = wp->grad.data() + static_cast<size_t>(o) * in_dim;
                                      for (int i = 0; i < in_dim; ++i)
                                          wg[i] += g * xp->value[static_cast<size_t>(i)];
                                  }
                              }
                              if (xp->requires_grad) {
                                  xp->ensure_grad();
                                  for (int o = 0; o < out_dim; ++o) {
                                      double g = self.grad[static_cast<size_t>(o)];
                                      const double* wr =
                                          wp->value.data() + static_cast<size_t>(o) * in_dim;
                                      for (int i = 0; i < in_dim; ++i)
                                          xp->grad[static_cast<size_t>(i)] += g * wr[i];
                                  }
                              }
                          }));
}

namespace {

// Unrolled patch matrix for convolution: rows indexed by (c, ky, kx), columns
// by output pixel (oy, ox); out-of-bounds taps are zero. Rows are contiguous
// over output pixels, so the convolution reduces to long row sweeps that the
// compiler vectorizes. Kernels here are tiny (K ≤ 144, P ≤ 256), so the
// scratch matrix stays cache-resident; a thread-local buffer avoids churn.
struct PatchMatrix {
    int rows = 0;  // C*kh*kw
    int cols = 0;  // Ho*Wo
    std::vector<double> m;

    void build(const double* xv, int C, int H, int W, int kh, int kw, int stride, int pad,
               int Ho, int Wo) {
        rows = C * kh * kw;
        cols = Ho * Wo;
        m.assign(static_cast<size_t>(rows) * cols, 0.0);
        for (int c = 0; c < C; ++c) {
            const double* xc = xv + static_cast<size_t>(c) * H * W;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double* row =
                        m.data() + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * cols;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* xr = xc + static_cast<size_t>(iy) * W;
                        double* orow = row + static_cast<size_t>(oy) * Wo;
                        const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                        const int ox_hi =
                            (W - 1 - kx + pad < 0)
                                ? ox_lo
                                : std::min(Wo, (W - 1 - kx + pad) / stride + 1);
                        const double* xs =
                            xr + static_cast<size_t>(ox_lo) * stride + kx - pad;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] = xs[ox - ox_lo];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                orow[ox] = xs[static_cast<size_t>(ox - ox_lo) * stride];
                        }
                    }
                }
            }
        }
    }

    // Scatter-add rows back into input-gradient layout (transpose of build).
    void scatter_add(double* xg, int C, int H, int W, int kh, int kw, int stride, int pad,
                     int Ho, int Wo) const {
        for (int c = 0; c < C; ++c) {
            double* xc = xg + static_cast<size_t>(c) * H * W;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double* row =
                        m.data() + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(ky) * kw + kx) * cols;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        double* xr = xc + static_cast<size_t>(iy) * W;
                        const double* orow = row + static_cast<size_t>(oy) * Wo;
                        const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                        const int ox_hi =
                            (W - 1 - kx + pad < 0)
                                ? ox_lo
                                : std::min(Wo, (W - 1 - kx + pad) / stride + 1);
                        double* xs = xr + static_cast<size_t>(ox_lo) * stride + kx - pad;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ++ox) xs[ox - ox_lo] += orow[ox];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                xs[static_cast<size_t>(ox - ox_lo) * stride] += orow[ox];
                        }
                    }
                }
            }
        }
    }
};

thread_local PatchMatrix conv_scratch;

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto& xn = need(x, "conv2d");
    const auto& wn = need(w, "conv2d");
    const auto& bn = need(b, "conv2d");
    if (xn.shape.size() != 3) raise(ErrorCategory::Usage, "conv2d: input must be {C,H,W}");
    if (wn.shape.size() != 4) raise(ErrorCategory::Usage, "conv2d: weight must be {F,C,kh,kw}");
    if (stride < 1) raise(ErrorCategory::Usage, "conv2d: stride must be >= 1");
    if (pad < 0) raise(ErrorCategory::Usage, "conv2d: pad must be >= 0");
    const int C = xn.shape[0], H = xn.shape[1], W = xn.shape[2];
    const int F = wn.shape[0], kh = wn.shape[2], kw = wn.shape[3];
    if (wn.shape[1] != C) raise(ErrorCategory::Usage, "conv2d: channel mismatch");
    if (static_cast<int>(bn.value.size()) != F)
        raise(ErrorCategory::Usage, "conv2d: bias size mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) raise(ErrorCategory::Usage, "conv2d: kernel larger than padded input");

    // Pointwise convolution over the unchanged grid needs no patch matrix:
    // the input already is one.
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    const int K = C * kh * kw;
    const int P = Ho * Wo;
    const double* patches;
    if (pointwise) {
        patches = xn.value.data();
    } else {
        conv_scratch.build(xn.value.data(), C, H, W, kh, kw, stride, pad, Ho, Wo);
        patches = conv_scratch.m.data();
    }

    std::vector<double> out(static_cast<size_t>(F) * P);
    const double* wv = wn.value.data();
    for (int f = 0; f < F; ++f) {
        double* orow = out.data() + static_cast<size_t>(f) * P;
        const double bias = bn.value[static_cast<size_t>(f)];
        for (int p = 0; p < P; ++p) orow[p] = bias;
        const double* wf = wv + static_cast<size_t>(f) * K;
        for (int k = 0; k < K; ++k) {
            const double wk = wf[k];
            const double* prow = patches + static_cast<size_t>(k) * P;
            for (int p = 0; p < P; ++p) orow[p] += wk * prow[p];
        }
    }

    auto xp = x.node(), wp = w.node(), bp = b.node();
    auto bwd = [xp, wp, bp, C, H, W, F, kh, kw, Ho, Wo, stride, pad, pointwise, K,
                P](TensorNode& self) {
        const double* gv = self.grad.data();
        const bool want_x = xp->requires_grad;
        const bool want_w = wp->requires_grad;
        const bool want_b = bp->requires_grad;
        if (want_x) xp->ensure_grad();
        if (want_w) wp->ensure_grad();
        if (want_b) bp->ensure_grad();

        if (want_b) {
            for (int f = 0; f < F; ++f) {
                const double* grow = gv + static_cast<size_t>(f) * P;
                double bg = 0.0;
                for (int p = 0; p < P; ++p) bg += grow[p];
                bp->grad[static_cast<size_t>(f)] += bg;
            }
        }
        if (want_w) {
            const double* patches;
            if (pointwise) {
                patches = xp->value.data();
            } else {
                conv_scratch.build(xp->value.data(), C, H, W, kh, kw, stride, pad, Ho, Wo);
                patches = conv_scratch.m.data();
            }
            for (int f = 0; f < F; ++f) {
                const double* grow = gv + static_cast<size_t>(f) * P;
                double* wg = wp->grad.data() + static_cast<size_t>(f) * K;
                for (int k = 0; k < K; ++k) {
                    const double* prow = patches + static_cast<size_t>(k) * P;
                    double acc = 0.0;
                    for (int p = 0; p < P; ++p) acc += grow[p] * prow[p];
                    wg[k] += acc;
                }
            }
        }
        if (want_x) {
            if (pointwise) {
                double* xg = xp->grad.data();
                const double* wv = wp->value.data();
                for (int f = 0; f < F; ++f) {
                    const double* grow = gv + static_cast<size_t>(f) * P;
                    const double* wf = wv + static_cast<size_t>(f) * K;
                    for (int k = 0; k < K; ++k) {
                        const double wk = wf[k];
                        double* xrow = xg + static_cast<size_t>(k) * P;
                        for (int p = 0; p < P; ++p) xrow[p] += grow[p] * wk;
                    }
                }
            } else {
                // patch-space gradient wᵀ·g, then fold back onto the input.
                conv_scratch.rows = K;
                conv_scratch.cols = P;
                conv_scratch.m.assign(static_cast<size_t>(K) * P, 0.0);
                const double* wv = wp->value.data();
                for (int f = 0; f < F; ++f) {
                    const double* grow = gv + static_cast<size_t>(f) * P;
                    const double* wf = wv + static_cast<size_t>(f) * K;
                    for (int k = 0; k < K; ++k) {
                        const double wk = wf[k];
                        if (wk == 0.0) continue;
                        double* prow = conv_scratch.m.data() + static_cast<size_t>(k) * P;
                        for (int p = 0; p < P; ++p) prow[p] += wk * grow[p];
                    }
                }
                conv_scratch.scatter_add(xp->grad.data(), C, H, W, kh, kw, stride, pad, Ho, Wo);
            }
        }
    };
    return Tensor(make_op({F, Ho, Wo}, std::move(out), {xp, wp, bp}, std::move(bwd)));
}

Tensor gather_cell(const Tensor& x, int row, int col) {
    const auto& xn = need(x, "gather_cell");
    if (xn.shape.size() != 3) raise(ErrorCategory::Usage, "gather_cell: input must be {C,H,W}");
    const int C = xn.shape[0], H = xn.shape[1], W = xn.shape[2];
    if (row < 0 || row >= H || col < 0 || col >= W)
        raise(ErrorCategory::Usage, "gather_cell: cell index out of range");
    std::vector<double> out(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c)
        out[static_cast<size_t>(c)] = xn.value[(static_cast<size_t>(c) * H + row) * W + col];
    auto xp = x.node();
    return Tensor(make_op({C}, std::move(out), {xp}, [xp, C, H, W, row, col](TensorNode& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int c = 0; c < C; ++c)
            xp->grad[(static_cast<size_t>(c) * H + row) * W + col] +=
                self.grad[static_cast<size_t>(c)];
    }));
}

Tensor slice(const Tensor& x, int offset, int count) {
    const auto& xn = need(x, "slice");
    if (offset < 0 || count < 1 || offset + count > static_cast<int>(xn.value.size()))
        raise(ErrorCategory::Usage, "slice: range out of bounds");
    std::vector<double> out(xn.value.begin() + offset, xn.value.begin() + offset + count);
    auto xp = x.node();
    return Tensor(make_op({count}, std::move(out), {xp}, [xp, offset, count](TensorNode& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int i = 0; i < count; ++i)
            xp->grad[static_cast<size_t>(offset + i)] += self.grad[static_cast<size_t>(i)];
    }));
}

// ---------------------------------------------------------------------------
// Fused losses
// ---------------------------------------------------------------------------

Tensor gaussian_kl_loss(const Tensor& pred, const std::vector<double>& target,
                        const Tensor& raw_chol) {
    const auto& pn = need(pred, "gaussian_kl_loss");
    const auto& rn = need(raw_chol, "gaussian_kl_loss");
    const int d = static_cast<int>(pn.value.size());
    if (static_cast<int>(target.size()) != d)
        raise(ErrorCategory::Usage, "gaussian_kl_loss: target size mismatch");
    if (static_cast<int>(rn.value.size()) != d * (d + 1) / 2)
        raise(ErrorCategory::Usage, "gaussian_kl_loss: raw parameter size mismatch");
    for (double v : rn.value)
        if (!std::isfinite(v))
            raise(ErrorCategory::InvalidParameter, "gaussian_kl_loss: non-finite raw parameter");

    // Build L: diag exp(clamped raw), strict lower verbatim.
    std::vector<double> L(static_cast<size_t>(d) * d, 0.0);
    std::vector<bool> active(static_cast<size_t>(d));  // clamp pass-through mask
    for (int i = 0; i < d; ++i) {
        double u = rn.value[static_cast<size_t>(i)];
        active[static_cast<size_t>(i)] = std::abs(u) < kCholDiagClamp;
        u = std::clamp(u, -kCholDiagClamp, kCholDiagClamp);
        L[static_cast<size_t>(i) * d + i] = std::exp(u);
    }
    {
        int k = d;
        for (int i = 1; i < d; ++i)
            for (int j = 0; j < i; ++j) L[static_cast<size_t>(i) * d + j] = rn.value[k++];
    }

    // e = target − pred; z = L⁻¹e (forward substitution); loss = ½|z|² + Σ log L_dd.
    std::vector<double> e(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) e[static_cast<size_t>(i)] = target[static_cast<size_t>(i)] - pn.value[static_cast<size_t>(i)];
    std::vector<double> z(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        double acc = e[static_cast<size_t>(i)];
        for (int t = 0; t < i; ++t) acc -= L[static_cast<size_t>(i) * d + t] * z[static_cast<size_t>(t)];
        z[static_cast<size_t>(i)] = acc / L[static_cast<size_t>(i) * d + i];
    }
    double loss = 0.0;
    for (double zi : z) loss += 0.5 * zi * zi;
    for (int i = 0; i < d; ++i) loss += std::log(L[static_cast<size_t>(i) * d + i]);

    // w = L⁻ᵀz = Σ⁻¹e (back substitution), precomputed for the backward pass.
    std::vector<double> w(static_cast<size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
        double acc = z[static_cast<size_t>(i)];
        for (int t = i + 1; t < d; ++t) acc -= L[static_cast<size_t>(t) * d + i] * w[static_cast<size_t>(t)];
        w[static_cast<size_t>(i)] = acc / L[static_cast<size_t>(i) * d + i];
    }

    auto pp = pred.node();
    auto rp = raw_chol.node();
    auto bwd = [pp, rp, d, L, z, w, active](TensorNode& self) {
        const double g = self.grad[0];
        // ∂loss/∂e = Σ⁻¹e = w and e = target − pred, so ∂loss/∂pred = −w.
        if (pp->requires_grad) {
            pp->ensure_grad();
            for (int i = 0; i < d; ++i) pp->grad[static_cast<size_t>(i)] -= g * w[static_cast<size_t>(i)];
        }
        if (rp->requires_grad) {
            rp->ensure_grad();
            // ∂loss/∂L_pq = −w_p z_q (quadratic term) + 1/L_pp on the diagonal;
            // diagonal raws chain through L_dd = exp(u) ⇒ (−w_d z_d L_dd + 1)·1{active}.
            for (int i = 0; i < d; ++i) {
                if (!active[static_cast<size_t>(i)]) continue;
                double ld = L[static_cast<size_t>(i) * d + i];
                rp->grad[static_cast<size_t>(i)] += g * (-w[static_cast<size_t>(i)] * z[static_cast<size_t>(i)] * ld + 1.0);
            }
            int k = d;
            for (int i = 1; i < d; ++i)
                for (int j = 0; j < i; ++j)
                    rp->grad[static_cast<size_t>(k++)] += g * (-w[static_cast<size_t>(i)] * z[static_cast<size_t>(j)]);
        }
    };
    return Tensor(make_op({1}, {loss}, {pp, rp}, std::move(bwd)));
}

Tensor focal_loss(const Tensor& logits, const std::vector<double>& targets, double alpha,
                  double gamma) {
    const auto& ln = need(logits, "focal_loss");
    if (targets.size() != ln.value.size())
        raise(ErrorCategory::Usage, "focal_loss: target size mismatch");

    double loss = 0.0;
    for (size_t i = 0; i < targets.size(); ++i) {
        const double x = ln.value[i];
        const double p = stable_sigmoid(x);
        const double log_p = -softplus(-x);
        const double log_q = -softplus(x);
        if (targets[i] > 0.5) {
            const double q = 1.0 - p;
            loss += -alpha * std::pow(q, gamma) * log_p;
        } else {
            loss += -(1.0 - alpha) * std::pow(p, gamma) * log_q;
        }
    }
    auto lp = logits.node();
    auto tcopy = targets;
    auto bwd = [lp, tcopy, alpha, gamma](TensorNode& self) {
        if (!lp->requires_grad) return;
        lp->ensure_grad();
        const double g = self.grad[0];
        for (size_t i = 0; i < tcopy.size(); ++i) {
            const double x = lp->value[i];
            const double p = stable_sigmoid(x);
            const double q = 1.0 - p;
            const double log_p = -softplus(-x);
            const double log_q = -softplus(x);
            double dx;
            if (tcopy[i] > 0.5) {
                dx = alpha * gamma * std::pow(q, gamma) * p * log_p -
                     alpha * std::pow(q, gamma + 1.0);
            } else {
                dx = -(1.0 - alpha) * gamma * std::pow(p, gamma) * q * log_q +
                     (1.0 - alpha) * std::pow(p, gamma + 1.0);
            }
            lp->grad[i] += g * dx;
        }
    };
    return Tensor(make_op({1}, {loss}, {lp}, std::move(bwd)));
}

Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target, double beta) {
    const auto& pn = need(pred, "smooth_l1");
    if (target.size() != pn.value.size())
        raise(ErrorCategory::Usage, "smooth_l1: target size mismatch");
    if (!(beta > 0.0)) raise(ErrorCategory::InvalidParameter, "smooth_l1: beta must be positive");

    double loss = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        const double d = pn.value[i] - target[i];
        const double a = std::abs(d);
        loss += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
    }
    auto pp = pred.node();
    auto tcopy = target;
    auto bwd = [pp, tcopy, beta](TensorNode& self) {
        if (!pp->requires_grad) return;
        pp->ensure_grad();
        const double g = self.grad[0];
        for (size_t i = 0; i < tcopy.size(); ++i) {
            const double d = pp->value[i] - tcopy[i];
            const double dd = (std::abs(d) < beta) ? d / beta : (d > 0.0 ? 1.0 : -1.0);
            pp->grad[i] += g * dd;
        }
    };
    return Tensor(make_op({1}, {loss}, {pp}, std::move(bwd)));
}

}  // namespace dmuq
