#pragma once

#include <vector>

#include "dmuq/matrix.hpp"

namespace dmuq {

// Uncertainty representation attached to a detector head. None means the
// model carries no covariance head (plain and bootstrap-only baselines).
enum class CovVariant : int { None = 0, IMG = 1, ISG = 2, DMG = 3 };

const char* to_string(CovVariant v);
CovVariant cov_variant_from_string(const std::string& s);

// Corner count and BEV dimensionality used throughout.
inline constexpr int kCorners = 4;  // I
inline constexpr int kBevDim = 2;   // D

// Gaussian belief over one corner location (meters / meters²).
struct CornerGaussian {
    std::vector<double> mean;  // D entries
    CovMatrix cov;             // D×D
};

// Per-box uncertainty payload; the populated member follows the variant.
//  IMG: one Gaussian per corner. ISG: one variance per corner-dimension
//  (row-major corner, then x/y). DMG: one joint Gaussian over all corners.
struct BoxUncertainty {
    CovVariant variant = CovVariant::None;
    std::vector<CornerGaussian> corners;  // IMG: I entries
    std::vector<double> variances;        // ISG: I·D entries
    std::vector<double> joint_mean;       // DMG: I·D entries
    CovMatrix joint_cov;                  // DMG: (I·D)×(I·D)
};

// Bootstrap-derived uncertainty statistics: sigma_a is the mean predicted
// (aleatoric) covariance across iterations, sigma_e the covariance of
// pooled validation residuals (epistemic).
struct UQStats {
    CovVariant variant = CovVariant::None;
    int block_length = 0;   // l
    int n_bootstraps = 0;   // N
    int n_residuals = 0;
    CovMatrix sigma_a;
    CovMatrix sigma_e;
};

// log N(y; mean, cov) with the full multivariate normalizer:
// −(D/2)·ln(2π) − ½·logdet(cov) − ½·(y−mean)ᵀcov⁻¹(y−mean).
double log_pdf(const CornerGaussian& corner, const std::vector<double>& y);

// Two-term regression loss: ½(y−ŷ)ᵀΣ̂⁻¹(y−ŷ) + ½log|Σ̂| (constants dropped).
double kl_regression_loss(const std::vector<double>& y, const std::vector<double>& y_hat,
                          const CovMatrix& sigma);

// Per-dimension univariate sum of the same two-term loss.
double loss_isg(const std::vector<double>& y, const std::vector<double>& y_hat,
                const std::vector<double>& variances);

// Joint all-corner version at dimensionality I·D.
double loss_dmg(const std::vector<double>& y_all, const std::vector<double>& y_hat_all,
                const CovMatrix& sigma_big);

// Σ̄ = Σ_e + ½Σ_a + ½Σ̂.
CovMatrix combine_covariance(const CovMatrix& sigma_e, const CovMatrix& sigma_a,
                             const CovMatrix& sigma_hat);

// Elementwise mean of every predicted covariance collected across iterations.
CovMatrix estimate_sigma_a(const std::vector<CovMatrix>& predicted);

// Population covariance (divide by n, centered at the empirical mean) of
// pooled residual vectors; requires at least D+1 of them.
CovMatrix estimate_sigma_e(const std::vector<std::vector<double>>& residuals);

}  // namespace dmuq
