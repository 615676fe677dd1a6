#pragma once

#include <array>
#include <vector>

#include "dmuq/error.hpp"

namespace dmuq {

// Range the raw diagonal entries of CholParams are clamped to before exp;
// keeps the reconstructed covariance away from overflow and exact singularity.
inline constexpr double kCholDiagClamp = 10.0;

// Dense symmetric matrix of small dimension (2 for a single corner in the
// BEV plane, 8 for the joint all-corner representation). Entries are m².
class CovMatrix {
  public:
    CovMatrix() = default;
    explicit CovMatrix(int dim) : dim_(dim), m_(static_cast<size_t>(dim) * dim, 0.0) {}

    static CovMatrix zero(int dim) { return CovMatrix(dim); }

    static CovMatrix identity(int dim) {
        CovMatrix s(dim);
        for (int i = 0; i < dim; ++i) s.at(i, i) = 1.0;
        return s;
    }

    static CovMatrix diagonal(const std::vector<double>& d) {
        CovMatrix s(static_cast<int>(d.size()));
        for (size_t i = 0; i < d.size(); ++i) s.at(static_cast<int>(i), static_cast<int>(i)) = d[i];
        return s;
    }

    int dim() const { return dim_; }
    double& at(int i, int j) { return m_[static_cast<size_t>(i) * dim_ + j]; }
    double at(int i, int j) const { return m_[static_cast<size_t>(i) * dim_ + j]; }
    const std::vector<double>& data() const { return m_; }
    std::vector<double>& data() { return m_; }

    CovMatrix operator+(const CovMatrix& o) const;
    CovMatrix operator*(double s) const;

    double trace() const;
    bool finite() const;
    // max |a_ij - a_ji|
    double symmetry_error() const;

  private:
    int dim_ = 0;
    std::vector<double> m_;
};

// Unconstrained parameterization of a symmetric positive definite matrix:
// raw = [d_0 .. d_{D-1}, l_{10}, l_{20}, l_{21}, ...]. The lower-triangular
// factor has L_dd = exp(clamp(d_d)) and strict-lower entries taken verbatim,
// so any finite raw vector reconstructs to a valid covariance.
struct CholParams {
    int dim = 0;
    std::vector<double> raw;

    CholParams() = default;
    CholParams(int d, std::vector<double> r) : dim(d), raw(std::move(r)) {}

    static int raw_size(int dim) { return dim * (dim + 1) / 2; }
};

CovMatrix cholesky_reconstruct(const CholParams& params);

// log |Σ|; closed form ad - b² for D=2, Cholesky otherwise.
double logdet(const CovMatrix& sigma);

CovMatrix mat_inverse(const CovMatrix& sigma);

// (v)ᵀ Σ⁻¹ (v) without forming the inverse (Cholesky solve).
double quad_form_inv(const CovMatrix& sigma, const std::vector<double>& v);

// Eigenvalues of a 2×2 symmetric matrix, ascending (closed form).
std::array<double, 2> eigenvalues_2x2(const CovMatrix& sigma);

// Eigenvalues of a symmetric matrix of any small dimension, ascending
// (cyclic Jacobi sweeps).
std::vector<double> sym_eigenvalues(const CovMatrix& sigma);

// Eigen-decomposition of a 2×2 symmetric matrix: returns eigenvalues
// ascending and unit eigenvectors as columns (vec[k] pairs with val[k]).
void eigen_2x2(const CovMatrix& sigma, std::array<double, 2>& values,
               std::array<std::array<double, 2>, 2>& vectors);

// Lower-triangular Cholesky factor; raises non-PSD error on failure.
std::vector<double> cholesky_factor(const CovMatrix& sigma);

bool is_psd(const CovMatrix& sigma, double tol = 1e-9);

}  // namespace dmuq
