#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dmuq/error.hpp"

namespace dmuq {

// ---------------------------------------------------------------------------
// Gradient mode
// ---------------------------------------------------------------------------

// Thread-local flag: when false, ops produce plain values with no graph links.
bool grad_enabled();
void set_grad_enabled(bool on);

// RAII scope that disables graph recording (inference, metric computation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

namespace detail {
struct TensorNode;
}

// ---------------------------------------------------------------------------
// Tensor: shared handle to a value (+ optional grad and op-graph link)
// ---------------------------------------------------------------------------

// Define-by-run reverse-mode tensor. Ops below build an acyclic graph;
// backward() on a scalar root propagates gradients to every reachable
// parameter, visiting each graph node exactly once. Leaf gradients
// accumulate across backward calls until zero_grad().
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

    // Leaf without gradient tracking (inputs, targets).
    static Tensor constant(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v);
    // Leaf with gradient tracking (learned parameters).
    static Tensor param(std::vector<int> shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int numel() const;
    bool requires_grad() const;

    const std::vector<double>& value() const;
    std::vector<double>& value();  // mutable for optimizer updates
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;  // value of a one-element tensor

    // Reverse-mode sweep from a scalar root.
    void backward() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

  private:
    std::shared_ptr<detail::TensorNode> node_;
};

// ---------------------------------------------------------------------------
// Forward ops (all differentiable; shape mismatch raises a usage error)
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise max; ties route the gradient to the first argument.
Tensor maximum(const Tensor& a, const Tensor& b);
// Elementwise max across a list of same-shape tensors (feature fusion).
Tensor max_reduce(const std::vector<Tensor>& xs);

// a*x + b elementwise; b empty means zero offset, else numel-sized.
Tensor affine(const Tensor& x, double a, const std::vector<double>& b);
Tensor scale(const Tensor& x, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor exp_op(const Tensor& x);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// Dense affine map: w is {out,in}, x is {in}, b is {out} -> {out}.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// 2-D convolution: x {C,H,W}, w {F,C,kh,kw}, b {F}; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Extract the per-channel column at one spatial cell: {C,H,W} -> {C}.
Tensor gather_cell(const Tensor& x, int row, int col);

// Contiguous run of the flattened values: -> {count}.
Tensor slice(const Tensor& x, int offset, int count);

// ---------------------------------------------------------------------------
// Fused losses (scalar outputs with analytic backward passes)
// ---------------------------------------------------------------------------

// ½ eᵀΣ⁻¹e + ½log|Σ| with e = target − pred and Σ = LLᵀ from raw_chol
// (layout: D raw diagonals, exp-mapped with clamp, then strict lower rows).
// pred is {D}; raw_chol is {D(D+1)/2}. Gradients flow to pred and raw_chol.
Tensor gaussian_kl_loss(const Tensor& pred, const std::vector<double>& target,
                        const Tensor& raw_chol);

// Focal binary cross-entropy summed over cells; targets are 0/1 per element.
Tensor focal_loss(const Tensor& logits, const std::vector<double>& targets,
                  double alpha = 0.25, double gamma = 2.0);

// Smooth-L1 (Huber) summed over dims: ½d²/β for |d|<β else |d|−½β, d = pred−target.
Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target, double beta);

}  // namespace dmuq
