#pragma once

#include "tlab/linalg.hpp"
#include "tlab/taskmodel.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

struct LinearPredictor {
    Vector coef;
};

struct TransferFit {
    LinearPredictor predictor;
    double alpha = 0.0;
    std::vector<Matrix> assumed_relations;
};

inline LinearPredictor null_predictor(int d) { return {Vector::Zero(d)}; }

inline LinearPredictor fit_min_norm_ls(const Matrix& z, const Vector& v) {
    if (z.rows() != v.size()) throw std::invalid_argument("fit_min_norm_ls: dimension mismatch");
    require_finite(z, "fit_min_norm_ls");
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(z);
    cod.setThreshold(static_cast<double>(std::max(z.rows(), z.cols())) *
                     std::numeric_limits<double>::epsilon());
    return {cod.solve(v)};
}

inline LinearPredictor fit_ridge(const Matrix& x, const Vector& y, double alpha, int n) {
    if (!(alpha > 0.0)) throw std::invalid_argument("fit_ridge: alpha must be > 0");
    if (x.rows() != y.size()) throw std::invalid_argument("fit_ridge: dimension mismatch");
    Matrix a = x.transpose() * x;
    a.diagonal().array() += n * alpha;
    Eigen::LLT<Matrix> llt(a);
    return {llt.solve(x.transpose() * y)};
}

// Precomputes everything in the transfer closed form that does not depend on
// alpha, so that a hyperparameter sweep costs one factorization per value.
class TransferProblem {
public:
    TransferProblem(const Matrix& x, const Vector& y, const std::vector<LinearPredictor>& pretrained,
                    const std::vector<Matrix>& relations, int n)
        : n_(n), relations_(relations) {
        if (pretrained.size() != relations.size() || relations.empty())
            throw std::invalid_argument("fit_transfer: need one relation per pretrained model");
        if (x.rows() != y.size()) throw std::invalid_argument("fit_transfer: dimension mismatch");
        const Eigen::Index d = x.cols();
        gram_ = x.transpose() * x;
        xty_ = x.transpose() * y;
        r2_ = Matrix::Zero(d, d);
        anchor_ = Vector::Zero(d);
        for (std::size_t j = 0; j < relations.size(); ++j) {
            const Matrix& h = relations[j];
            if (h.rows() != d || h.cols() != d || pretrained[j].coef.size() != d)
                throw std::invalid_argument("fit_transfer: relation or model dimension mismatch");
            r2_.noalias() += h.transpose() * h;
            anchor_.noalias() += h.transpose() * pretrained[j].coef;
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(r2_, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues()(0), hi = es.eigenvalues()(d - 1);
        if (!(hi > 0.0 && lo > tolerances().relation_rank * hi))
            throw std::invalid_argument(
                "fit_transfer: relations not jointly full rank (sum of H_j^T H_j is singular; "
                "min eigenvalue " + std::to_string(lo) + ", max " + std::to_string(hi) + ")");
    }

    TransferFit solve(double alpha) const {
        if (!(alpha > 0.0)) throw std::invalid_argument("fit_transfer: alpha must be > 0");
        const double s = n_ * alpha;
        Matrix a = gram_ + s * r2_;
        Eigen::LLT<Matrix> llt(a);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("fit_transfer: system is not positive definite");
        return {{llt.solve(xty_ + s * anchor_)}, alpha, relations_};
    }

    Vector coef(double alpha) const { return solve(alpha).predictor.coef; }

private:
    int n_;
    std::vector<Matrix> relations_;
    Matrix gram_, r2_;
    Vector xty_, anchor_;
};

inline TransferFit fit_transfer(const Matrix& x, const Vector& y,
                                const std::vector<LinearPredictor>& pretrained,
                                const std::vector<Matrix>& relations, double alpha, int n) {
    return TransferProblem(x, y, pretrained, relations, n).solve(alpha);
}

inline LinearPredictor fit_tikhonov(const Matrix& x, const Vector& y, const Matrix& r, double alpha,
                                    int n) {
    if (!(alpha > 0.0)) throw std::invalid_argument("fit_tikhonov: alpha must be > 0");
    if (x.rows() != y.size() || r.cols() != x.cols())
        throw std::invalid_argument("fit_tikhonov: dimension mismatch");
    const Matrix rtr = r.transpose() * r;
    Eigen::SelfAdjointEigenSolver<Matrix> es(rtr, Eigen::EigenvaluesOnly);
    const Eigen::Index d = rtr.rows();
    if (!(es.eigenvalues()(d - 1) > 0.0 &&
          es.eigenvalues()(0) > tolerances().relation_rank * es.eigenvalues()(d - 1)))
        throw std::invalid_argument("fit_tikhonov: R is rank deficient");
    Matrix a = x.transpose() * x + n * alpha * rtr;
    Eigen::LLT<Matrix> llt(a);
    return {llt.solve(x.transpose() * y)};
}

inline double test_error_analytic(const LinearPredictor& pred, const Vector& beta,
                                  const Matrix& sigma_x, double sigma_eps_sq) {
    if (pred.coef.size() != beta.size() || sigma_x.rows() != beta.size())
        throw std::invalid_argument("test_error_analytic: dimension mismatch");
    const Vector e = pred.coef - beta;
    return sigma_eps_sq + e.dot(sigma_x * e);
}

inline double test_error_mc(const LinearPredictor& pred, const Dataset& test) {
    if (test.outputs.size() == 0) throw std::invalid_argument("test_error_mc: empty test set");
    if (test.inputs.cols() != pred.coef.size())
        throw std::invalid_argument("test_error_mc: dimension mismatch");
    return (test.inputs * pred.coef - test.outputs).squaredNorm() /
           static_cast<double>(test.outputs.size());
}

}  // namespace tlab
