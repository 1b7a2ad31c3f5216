#pragma once

#include "tlab/estimators.hpp"
#include "tlab/linalg.hpp"
#include "tlab/stats.hpp"
#include "tlab/taskmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace tlab {

inline std::vector<Matrix> debias_relations_known(const std::vector<int>& n_tildes, int d) {
    std::vector<Matrix> out;
    out.reserve(n_tildes.size());
    for (int nt : n_tildes) {
        if (nt < 1) throw std::invalid_argument("debias_relations_known: n_tilde must be >= 1");
        const double f = nt >= d ? 1.0 : static_cast<double>(nt) / d;
        out.push_back(f * Matrix::Identity(d, d));
    }
    return out;
}

inline std::vector<double> log_grid(double lo, double hi, int count) {
    if (count < 1 || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_grid: bad range");
    std::vector<double> g(count);
    if (count == 1) {
        g[0] = lo;
        return g;
    }
    const double a = std::log(lo), b = std::log(hi);
    for (int i = 0; i < count; ++i) g[i] = std::exp(a + (b - a) * i / (count - 1));
    g.front() = lo;
    g.back() = hi;
    return g;
}

inline std::vector<double> linear_grid(double lo, double hi, int count) {
    if (count < 1 || !(hi >= lo)) throw std::invalid_argument("linear_grid: bad range");
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) g[i] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
    return g;
}

inline std::vector<double> default_alpha_grid() { return log_grid(1e-4, 1e2, 30); }

// 20 points on [0.05, 1.5] plus 1 and the known-size factors, sorted and deduplicated.
inline std::vector<double> default_rho_grid(const std::vector<double>& gamma_srcs = {}) {
    std::vector<double> g = linear_grid(0.05, 1.5, 20);
    g.push_back(1.0);
    for (double gs : gamma_srcs)
        if (gs > 0.0) g.push_back(gs > 1.0 ? 1.0 / gs : 1.0);
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end(),
                        [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, b); }),
            g.end());
    return g;
}

struct DebiasGrid {
    std::vector<double> alpha_grid = default_alpha_grid();
    std::vector<double> rho_grid = default_rho_grid();
};

inline void validate(const DebiasGrid& g) {
    auto check = [](const std::vector<double>& v, const char* what) {
        if (v.empty()) throw std::invalid_argument(std::string(what) + ": grid is empty");
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i]) || !(v[i] > 0.0))
                throw std::invalid_argument(std::string(what) + ": grid values must be positive");
            if (i && !(v[i] > v[i - 1]))
                throw std::invalid_argument(std::string(what) + ": grid must be sorted ascending");
        }
    };
    check(g.alpha_grid, "alpha_grid");
    check(g.rho_grid, "rho_grid");
}

struct ValidationSelection {
    double alpha = 0.0;
    double rho = 0.0;
    double val_error = 0.0;
    TransferFit fit;
    // val_errors[r * alpha_grid.size() + a]
    std::vector<double> val_errors;
};

inline double validation_mse(const Vector& coef, const Dataset& val) {
    return (val.inputs * coef - val.outputs).squaredNorm() /
           static_cast<double>(val.outputs.size());
}

// Joint (alpha, rho) grid search with H_j = rho I for every source. With scalar
// relations the system matrix is X^T X + n alpha m rho^2 I, so one
// eigendecomposition of X^T X serves every grid pair.
inline ValidationSelection tune_validation(const Dataset& train, const Dataset& val,
                                           const std::vector<LinearPredictor>& pretrained,
                                           const DebiasGrid& grids, int n, int threads = 1) {
    validate(grids);
    if (val.outputs.size() == 0) throw std::invalid_argument("tune_validation: empty validation set");
    if (pretrained.empty()) throw std::invalid_argument("tune_validation: no pretrained models");
    const Eigen::Index d = train.inputs.cols();
    const double m = static_cast<double>(pretrained.size());
    Vector theta_sum = Vector::Zero(d);
    for (const auto& p : pretrained) theta_sum += p.coef;

    Eigen::SelfAdjointEigenSolver<Matrix> es(train.inputs.transpose() * train.inputs);
    const Matrix& v = es.eigenvectors();
    const Vector lam = es.eigenvalues().cwiseMax(0.0);
    const Vector xty_rot = v.transpose() * (train.inputs.transpose() * train.outputs);
    const Vector anchor_rot = v.transpose() * theta_sum;
    const Matrix val_rot = val.inputs * v;

    const std::size_t na = grids.alpha_grid.size(), nr = grids.rho_grid.size();
    std::vector<double> errs(na * nr);
    parallel_for(na * nr, threads, [&](std::size_t idx) {
        const double rho = grids.rho_grid[idx / na];
        const double alpha = grids.alpha_grid[idx % na];
        const double s = n * alpha;
        const Vector coef_rot =
            ((xty_rot + s * rho * anchor_rot).array() / (lam.array() + s * m * rho * rho)).matrix();
        errs[idx] = (val_rot * coef_rot - val.outputs).squaredNorm() /
                    static_cast<double>(val.outputs.size());
    });
    // Row-major scan over (rho, alpha) with strict improvement gives the
    // smaller-rho-then-smaller-alpha tie break.
    std::size_t best = 0;
    for (std::size_t i = 1; i < errs.size(); ++i)
        if (errs[i] < errs[best]) best = i;

    ValidationSelection sel;
    sel.rho = grids.rho_grid[best / na];
    sel.alpha = grids.alpha_grid[best % na];
    sel.val_error = errs[best];
    sel.val_errors = std::move(errs);
    std::vector<Matrix> rel(pretrained.size(), sel.rho * Matrix::Identity(d, d));
    sel.fit = fit_transfer(train.inputs, train.outputs, pretrained, rel, sel.alpha, n);
    return sel;
}

}  // namespace tlab
