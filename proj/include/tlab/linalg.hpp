#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace tlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Every numerical tolerance used by the library lives here so that the
// production code and the test-suite agree on them.
struct Tolerances {
    double symmetry = 1e-9;         // relative asymmetry accepted as symmetric
    double psd = 1e-10;             // relative negative eigenvalue accepted as zero
    double relation_rank = 1e-10;     // min/max eigenvalue ratio of the relation Gram sum
    double fixed_point = 1e-13;     // bisection stopping width
    int max_bisection_iters = 400;
    double pinv_scale = 1.0;        // multiplies max(rows, cols) * eps
};

inline const Tolerances& tolerances() {
    static const Tolerances t{};
    return t;
}

struct Spectrum {
    Vector eigenvalues;   // descending
    Matrix eigenvectors;  // columns, orthonormal
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite())
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

inline void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite())
        throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

inline bool is_symmetric(const Matrix& s, double rel_tol = tolerances().symmetry) {
    if (s.rows() != s.cols()) return false;
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    return (s - s.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline void require_symmetric(const Matrix& s, const char* what) {
    require_finite(s, what);
    if (!is_symmetric(s))
        throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
}

inline Spectrum eig_sym(const Matrix& s) {
    require_symmetric(s, "eig_sym");
    const Matrix sym = 0.5 * (s + s.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eig_sym: eigensolver did not converge");
    // Eigen returns ascending order; reverse to descending.
    Spectrum out;
    out.eigenvalues = es.eigenvalues().reverse();
    out.eigenvectors = es.eigenvectors().rowwise().reverse();
    return out;
}

inline Matrix pseudoinverse(const Matrix& m, double rel_tol = -1.0) {
    require_finite(m, "pseudoinverse");
    if (m.size() == 0) return Matrix(m.cols(), m.rows());
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    if (rel_tol < 0.0)
        rel_tol = tolerances().pinv_scale * static_cast<double>(std::max(m.rows(), m.cols())) *
                  std::numeric_limits<double>::epsilon();
    const double cutoff = rel_tol * smax;
    Vector inv = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Matrix sym_psd_sqrt(const Matrix& s) {
    const Spectrum sp = eig_sym(s);
    const double scale = std::max(1.0, std::abs(sp.eigenvalues(0)));
    Vector root(sp.eigenvalues.size());
    for (Eigen::Index i = 0; i < root.size(); ++i) {
        const double l = sp.eigenvalues(i);
        if (l < -tolerances().psd * scale)
            throw std::invalid_argument("sym_psd_sqrt: matrix is indefinite");
        root(i) = std::sqrt(std::max(l, 0.0));
    }
    Matrix r = sp.eigenvectors * root.asDiagonal() * sp.eigenvectors.transpose();
    return 0.5 * (r + r.transpose());
}

// Inverse square root of a symmetric positive-definite matrix.
inline Matrix sym_pd_inv_sqrt(const Matrix& s) {
    const Spectrum sp = eig_sym(s);
    if (sp.eigenvalues(sp.eigenvalues.size() - 1) <= 0.0)
        throw std::invalid_argument("sym_pd_inv_sqrt: matrix is not positive definite");
    const Vector inv_root = sp.eigenvalues.cwiseSqrt().cwiseInverse();
    Matrix r = sp.eigenvectors * inv_root.asDiagonal() * sp.eigenvectors.transpose();
    return 0.5 * (r + r.transpose());
}

inline bool is_scaled_identity(const Matrix& m, double* scale = nullptr) {
    if (m.rows() != m.cols() || m.rows() == 0) return false;
    const double c = m(0, 0);
    const double tol = 1e-14 * std::max(1.0, std::abs(c));
    Matrix diff = m;
    diff.diagonal().array() -= c;
    if (diff.cwiseAbs().maxCoeff() > tol) return false;
    if (scale) *scale = c;
    return true;
}

}  // namespace tlab
