#include "dmuq/distributions.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dmuq {

const char* to_string(CovVariant v) {
    switch (v) {
        case CovVariant::None: return "none";
        case CovVariant::IMG: return "img";
        case CovVariant::ISG: return "isg";
        case CovVariant::DMG: return "dmg";
    }
    return "none";
}

CovVariant cov_variant_from_string(const std::string& s) {
    if (s == "none") return CovVariant::None;
    if (s == "img") return CovVariant::IMG;
    if (s == "isg") return CovVariant::ISG;
    if (s == "dmg") return CovVariant::DMG;
    raise(ErrorCategory::Config, "unknown covariance variant '" + s + "'");
}

double log_pdf(const CornerGaussian& corner, const std::vector<double>& y) {
    const int d = corner.cov.dim();
    if (static_cast<int>(corner.mean.size()) != d || static_cast<int>(y.size()) != d)
        raise(ErrorCategory::Usage, "log_pdf: dimension mismatch");
    std::vector<double> e(y.size());
    for (size_t i = 0; i < y.size(); ++i) e[i] = y[i] - corner.mean[i];
    const double ld = logdet(corner.cov);
    const double q = quad_form_inv(corner.cov, e);
    return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * ld - 0.5 * q;
}

double kl_regression_loss(const std::vector<double>& y, const std::vector<double>& y_hat,
                          const CovMatrix& sigma) {
    const int d = sigma.dim();
    if (static_cast<int>(y.size()) != d || static_cast<int>(y_hat.size()) != d)
        raise(ErrorCategory::Usage, "kl_regression_loss: dimension mismatch");
    std::vector<double> e(y.size());
    for (size_t i = 0; i < y.size(); ++i) e[i] = y[i] - y_hat[i];
    return 0.5 * quad_form_inv(sigma, e) + 0.5 * logdet(sigma);
}

double loss_isg(const std::vector<double>& y, const std::vector<double>& y_hat,
                const std::vector<double>& variances) {
    if (y.size() != y_hat.size() || y.size() != variances.size())
        raise(ErrorCategory::Usage, "loss_isg: dimension mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double v = variances[i];
        if (!(v > 0.0)) raise(ErrorCategory::InvalidParameter, "loss_isg: variance must be positive");
        const double e = y[i] - y_hat[i];
        loss += 0.5 * e * e / v + 0.5 * std::log(v);
    }
    return loss;
}

double loss_dmg(const std::vector<double>& y_all, const std::vector<double>& y_hat_all,
                const CovMatrix& sigma_big) {
    return kl_regression_loss(y_all, y_hat_all, sigma_big);
}

CovMatrix combine_covariance(const CovMatrix& sigma_e, const CovMatrix& sigma_a,
                             const CovMatrix& sigma_hat) {
    if (sigma_e.dim() != sigma_a.dim() || sigma_e.dim() != sigma_hat.dim())
        raise(ErrorCategory::Usage, "combine_covariance: dimension mismatch");
    return sigma_e + sigma_a * 0.5 + sigma_hat * 0.5;
}

CovMatrix estimate_sigma_a(const std::vector<CovMatrix>& predicted) {
    if (predicted.empty())
        raise(ErrorCategory::InsufficientData, "estimate_sigma_a: no covariances collected");
    const int d = predicted.front().dim();
    CovMatrix acc(d);
    for (const auto& s : predicted) {
        if (s.dim() != d) raise(ErrorCategory::Usage, "estimate_sigma_a: dimension mismatch");
        acc = acc + s;
    }
    return acc * (1.0 / static_cast<double>(predicted.size()));
}

CovMatrix estimate_sigma_e(const std::vector<std::vector<double>>& residuals) {
    if (residuals.empty())
        raise(ErrorCategory::InsufficientData, "estimate_sigma_e: no residuals collected");
    const int d = static_cast<int>(residuals.front().size());
    if (static_cast<int>(residuals.size()) < d + 1)
        raise(ErrorCategory::InsufficientData,
              "estimate_sigma_e: need at least D+1 residual vectors");
    const double n = static_cast<double>(residuals.size());

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (const auto& e : residuals) {
        if (static_cast<int>(e.size()) != d)
            raise(ErrorCategory::Usage, "estimate_sigma_e: inconsistent residual dimension");
        for (int i = 0; i < d; ++i) mean[static_cast<size_t>(i)] += e[static_cast<size_t>(i)];
    }
    for (double& m : mean) m /= n;

    CovMatrix cov(d);
    for (const auto& e : residuals)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                cov.at(i, j) += (e[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)]) *
                                (e[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) cov.at(i, j) /= n;
    return cov;
}

}  // namespace dmuq
