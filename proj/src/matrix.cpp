#include "dmuq/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace dmuq {

CovMatrix CovMatrix::operator+(const CovMatrix& o) const {
    if (dim_ != o.dim_) raise(ErrorCategory::Usage, "covariance dimension mismatch in +");
    CovMatrix r(dim_);
    for (size_t i = 0; i < m_.size(); ++i) r.m_[i] = m_[i] + o.m_[i];
    return r;
}

CovMatrix CovMatrix::operator*(double s) const {
    CovMatrix r(dim_);
    for (size_t i = 0; i < m_.size(); ++i) r.m_[i] = m_[i] * s;
    return r;
}

double CovMatrix::trace() const {
    double t = 0.0;
    for (int i = 0; i < dim_; ++i) t += at(i, i);
    return t;
}

bool CovMatrix::finite() const {
    for (double v : m_)
        if (!std::isfinite(v)) return false;
    return true;
}

double CovMatrix::symmetry_error() const {
    double e = 0.0;
    for (int i = 0; i < dim_; ++i)
        for (int j = i + 1; j < dim_; ++j) e = std::max(e, std::abs(at(i, j) - at(j, i)));
    return e;
}

CovMatrix cholesky_reconstruct(const CholParams& params) {
    const int d = params.dim;
    if (d <= 0 || static_cast<int>(params.raw.size()) != CholParams::raw_size(d))
        raise(ErrorCategory::InvalidParameter, "cholesky_reconstruct: raw size does not match dim");
    for (double v : params.raw)
        if (!std::isfinite(v))
            raise(ErrorCategory::InvalidParameter, "cholesky_reconstruct: non-finite raw parameter");

    // L: diagonal from exp(clamped raw), strict lower triangle verbatim.
    std::vector<double> L(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        double u = std::clamp(params.raw[i], -kCholDiagClamp, kCholDiagClamp);
        L[static_cast<size_t>(i) * d + i] = std::exp(u);
    }
    int k = d;
    for (int i = 1; i < d; ++i)
        for (int j = 0; j < i; ++j) L[static_cast<size_t>(i) * d + j] = params.raw[k++];

    CovMatrix s(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (int t = 0; t <= j; ++t)
                acc += L[static_cast<size_t>(i) * d + t] * L[static_cast<size_t>(j) * d + t];
            s.at(i, j) = acc;
            s.at(j, i) = acc;
        }
    return s;
}

std::vector<double> cholesky_factor(const CovMatrix& sigma) {
    const int d = sigma.dim();
    if (!sigma.finite()) raise(ErrorCategory::NonPsd, "cholesky: non-finite entries");
    std::vector<double> L(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = sigma.at(i, j);
            for (int t = 0; t < j; ++t)
                acc -= L[static_cast<size_t>(i) * d + t] * L[static_cast<size_t>(j) * d + t];
            if (i == j) {
                if (acc <= 0.0) raise(ErrorCategory::NonPsd, "cholesky: matrix not positive definite");
                L[static_cast<size_t>(i) * d + j] = std::sqrt(acc);
            } else {
                L[static_cast<size_t>(i) * d + j] = acc / L[static_cast<size_t>(j) * d + j];
            }
        }
    }
    return L;
}

double logdet(const CovMatrix& sigma) {
    const int d = sigma.dim();
    if (d == 2) {
        double det = sigma.at(0, 0) * sigma.at(1, 1) - sigma.at(0, 1) * sigma.at(1, 0);
        if (det <= 0.0) raise(ErrorCategory::NonPsd, "logdet: non-positive determinant");
        return std::log(det);
    }
    auto L = cholesky_factor(sigma);
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += std::log(L[static_cast<size_t>(i) * d + i]);
    return 2.0 * acc;
}

CovMatrix mat_inverse(const CovMatrix& sigma) {
    const int d = sigma.dim();
    if (d == 2) {
        double a = sigma.at(0, 0), b = sigma.at(0, 1), c = sigma.at(1, 0), e = sigma.at(1, 1);
        double det = a * e - b * c;
        if (!(det > 1e-15)) raise(ErrorCategory::SingularMatrix, "mat_inverse: near-singular matrix");
        CovMatrix r(2);
        r.at(0, 0) = e / det;
        r.at(0, 1) = -b / det;
        r.at(1, 0) = -c / det;
        r.at(1, 1) = a / det;
        return r;
    }
    auto L = cholesky_factor(sigma);
    double det = 1.0;
    for (int i = 0; i < d; ++i) {
        double ld = L[static_cast<size_t>(i) * d + i];
        det *= ld * ld;
    }
    if (!(det > 1e-15)) raise(ErrorCategory::SingularMatrix, "mat_inverse: near-singular matrix");

    // Invert via Cholesky solves against unit vectors.
    CovMatrix r(d);
    std::vector<double> z(d), w(d);
    for (int col = 0; col < d; ++col) {
        for (int i = 0; i < d; ++i) {
            double acc = (i == col) ? 1.0 : 0.0;
            for (int t = 0; t < i; ++t) acc -= L[static_cast<size_t>(i) * d + t] * z[t];
            z[i] = acc / L[static_cast<size_t>(i) * d + i];
        }
        for (int i = d - 1; i >= 0; --i) {
            double acc = z[i];
            for (int t = i + 1; t < d; ++t) acc -= L[static_cast<size_t>(t) * d + i] * w[t];
            w[i] = acc / L[static_cast<size_t>(i) * d + i];
        }
        for (int i = 0; i < d; ++i) r.at(i, col) = w[i];
    }
    // Symmetrize away solve round-off.
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            double v = 0.5 * (r.at(i, j) + r.at(j, i));
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    return r;
}

double quad_form_inv(const CovMatrix& sigma, const std::vector<double>& v) {
    const int d = sigma.dim();
    if (static_cast<int>(v.size()) != d)
        raise(ErrorCategory::Usage, "quad_form_inv: vector dimension mismatch");
    auto L = cholesky_factor(sigma);
    std::vector<double> z(d);
    for (int i = 0; i < d; ++i) {
        double acc = v[i];
        for (int t = 0; t < i; ++t) acc -= L[static_cast<size_t>(i) * d + t] * z[t];
        z[i] = acc / L[static_cast<size_t>(i) * d + i];
    }
    double q = 0.0;
    for (double x : z) q += x * x;
    return q;
}

std::array<double, 2> eigenvalues_2x2(const CovMatrix& sigma) {
    double a = sigma.at(0, 0), b = 0.5 * (sigma.at(0, 1) + sigma.at(1, 0)), c = sigma.at(1, 1);
    double tr = a + c;
    double det = a * c - b * b;
    double disc = std::max(0.0, tr * tr - 4.0 * det);
    double s = std::sqrt(disc);
    return {0.5 * (tr - s), 0.5 * (tr + s)};
}

void eigen_2x2(const CovMatrix& sigma, std::array<double, 2>& values,
               std::array<std::array<double, 2>, 2>& vectors) {
    values = eigenvalues_2x2(sigma);
    double a = sigma.at(0, 0), b = 0.5 * (sigma.at(0, 1) + sigma.at(1, 0)), c = sigma.at(1, 1);
    for (int k = 0; k < 2; ++k) {
        double lam = values[static_cast<size_t>(k)];
        // (A - λI)v = 0; pick the better-conditioned row.
        double vx, vy;
        if (std::abs(b) > 1e-14) {
            vx = b;
            vy = lam - a;
        } else {
            // Diagonal matrix: axis-aligned eigenvectors.
            vx = (std::abs(a - lam) <= std::abs(c - lam)) ? 1.0 : 0.0;
            vy = 1.0 - vx;
        }
        double n = std::sqrt(vx * vx + vy * vy);
        vectors[static_cast<size_t>(k)] = {vx / n, vy / n};
    }
}

std::vector<double> sym_eigenvalues(const CovMatrix& sigma) {
    const int d = sigma.dim();
    std::vector<double> a(sigma.data());
    auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * d + j]; };
    // Symmetrize first; Jacobi assumes exact symmetry.
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            double v = 0.5 * (at(i, j) + at(j, i));
            at(i, j) = v;
            at(j, i) = v;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                if (std::abs(at(p, q)) < 1e-18) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cth = 1.0 / std::sqrt(t * t + 1.0);
                double sth = t * cth;
                for (int k = 0; k < d; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = cth * akp - sth * akq;
                    at(k, q) = sth * akp + cth * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = cth * apk - sth * aqk;
                    at(q, k) = sth * apk + cth * aqk;
                }
            }
    }
    std::vector<double> vals(d);
    for (int i = 0; i < d; ++i) vals[i] = at(i, i);
    std::sort(vals.begin(), vals.end());
    return vals;
}

bool is_psd(const CovMatrix& sigma, double tol) {
    if (!sigma.finite()) return false;
    if (sigma.symmetry_error() > 1e-9) return false;
    auto vals = (sigma.dim() == 2) ? std::vector<double>{eigenvalues_2x2(sigma)[0],
                                                         eigenvalues_2x2(sigma)[1]}
                                   : sym_eigenvalues(sigma);
    return vals.front() >= -tol;
}

}  // namespace dmuq
