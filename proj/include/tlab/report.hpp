#pragma once

// Theory curves and decision-condition reports for the command-line tool.

#include "tlab/config.hpp"
#include "tlab/experiments.hpp"
#include "tlab/theory.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace tlab {

struct TheoryRow {
    double gamma_src = 0.0;
    int m = 0;
    std::string mode;
    double error = std::numeric_limits<double>::quiet_NaN();  // NaN when flagged
    std::string flag;                                          // "" or "threshold"
};

// Minimizes alpha -> err(alpha) over the grid, then refines with Brent's method
// on log(alpha) between the neighbours of the best grid point.
template <class Err>
double minimize_over_alpha(const std::vector<double>& grid, Err&& err) {
    std::size_t best = 0;
    std::vector<double> e(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        e[i] = err(grid[i]);
        if (e[i] < e[best]) best = i;
    }
    if (grid.size() < 3) return e[best];
    const double lo = std::log(grid[best == 0 ? 0 : best - 1]);
    const double hi = std::log(grid[std::min(best + 1, grid.size() - 1)]);
    const auto r = boost::math::tools::brent_find_minima([&](double t) { return err(std::exp(t)); }, lo, hi, 40);
    return std::min(e[best], r.second);
}

// Limiting errors per (gamma_src, m) for one theory mode:
//  simple  - orthonormal well-specified sources at the optimal alpha
//  debias  - the same with the known debiasing factor for overparameterized sources
//  general - finite-d model with the configured relations and first assumed-relation
//            mode, minimized over alpha (random relations use the run-0 draw)
inline std::vector<TheoryRow> theory_rows(const SweepConfig& cfg, TheoryMode mode) {
    std::vector<TheoryRow> out;
    std::unique_ptr<Experiment> ex;
    if (mode == TheoryMode::General) ex = std::make_unique<Experiment>(cfg);
    for (std::size_t gi = 0; gi < cfg.gamma_src_grid.size(); ++gi) {
        const double g = cfg.gamma_src_grid[gi];
        for (std::size_t mi = 0; mi < cfg.m_list.size(); ++mi) {
            TheoryRow row;
            row.gamma_src = g;
            row.m = cfg.m_list[mi];
            row.mode = to_string(mode);
            if (mode == TheoryMode::General) {
                AssumedMode am = cfg.modes.front();
                if (am == AssumedMode::DebiasTuned) am = AssumedMode::DebiasKnown;
                const auto truth = ex->draw_relations(gi, mi, 0);
                const GeneralErrorModel model(ex->theory_params(truth, ex->assumed_relations(am, truth, gi), gi));
                if (model.is_infinite()) {
                    row.flag = "threshold";
                } else {
                    row.error = minimize_over_alpha(cfg.alpha_grid, [&](double a) { return model.error(a).value(); });
                }
            } else if (g == 1.0) {
                row.flag = "threshold";
            } else {
                SimpleSettingParams p;
                p.gamma_tgt = cfg.gamma_tgt;
                p.gamma_src = g;
                p.m = row.m;
                p.b = cfg.b;
                p.sigma_eta_sq = cfg.sigma_eta_sq;
                p.sigma_xi_sq = cfg.sigma_xi_sq;
                p.sigma_eps_sq = cfg.sigma_eps_sq;
                row.error = (mode == TheoryMode::Debias && g > 1.0) ? debias_error_asymptotic(p)
                                                                    : error_simple_asymptotic(p);
            }
            out.push_back(row);
        }
    }
    return out;
}

struct CheckInput {
    int d = 128;
    int n_tilde = 32;
    int m = 1;
    double sigma_eta_sq = 0.5;
    double sigma_xi_sq = 0.5;
    double b = 1.0;
};

struct CheckResult {
    std::string text;
    bool threshold = false;
    bool transfer_beneficial = false;
    bool debias_beneficial = false;
};

// Evaluates both decision conditions and formats a human-readable report.
inline CheckResult check_conditions(const CheckInput& in) {
    if (in.d < 1 || in.n_tilde < 1 || in.m < 1 || in.sigma_eta_sq < 0.0 || in.sigma_xi_sq < 0.0 || !(in.b > 0.0))
        throw std::invalid_argument("check: d, n_tilde, m must be >= 1, noise >= 0 and b > 0");
    CheckResult res;
    std::ostringstream os;
    os.precision(10);
    const Region reg = region(in.d, in.n_tilde);
    os << "parameters: d=" << in.d << " n_tilde=" << in.n_tilde << " m=" << in.m << " sigma_eta_sq=" << in.sigma_eta_sq
       << " sigma_xi_sq=" << in.sigma_xi_sq << " b=" << in.b << "\n";
    os << "source region: " << to_string(reg) << "\n";
    os << "\n[transfer vs. tuned ridge]\n";
    if (reg == Region::Threshold) {
        res.threshold = true;
        os << "flag: threshold (|d - n_tilde| <= 1); the limiting error of each pretrained model is infinite\n";
        os << "verdict: not evaluated\n";
    } else {
        const InequalityReport r = negative_transfer_report(in.m, in.n_tilde, in.d, in.sigma_eta_sq, in.sigma_xi_sq, in.b);
        res.transfer_beneficial = r.holds;
        os << "lhs  sigma_eta_sq + d*sigma_xi_sq/(|d - n_tilde| - 1) = " << r.lhs << "\n";
        os << "rhs  b*(m + (m - 1)*(1 - rho))                        = " << r.rhs << "\n";
        os << "verdict: " << (r.holds ? "transfer is beneficial" : "negative transfer") << "\n";
        if (reg == Region::Overparam && in.m == 1 && in.sigma_eta_sq + in.sigma_xi_sq > in.b)
            os << "note: sigma_eta_sq + sigma_xi_sq > b with one model: "
                  "negative transfer for all overparameterization levels\n";
    }
    os << "\n[debiasing vs. plain transfer]\n";
    const int m_min = debias_min_models(in.n_tilde, in.d);
    os << "minimum number of models for debiasing (m > 1 + d/n_tilde): " << m_min << "\n";
    if (in.d < in.n_tilde + 2) {
        os << "verdict: not applicable (debiasing needs d >= n_tilde + 2)\n";
    } else {
        const InequalityReport r = debias_beneficial_report(in.m, in.n_tilde, in.d, in.sigma_eta_sq, in.sigma_xi_sq, in.b);
        res.debias_beneficial = r.holds;
        os << "lhs  (sigma_eta_sq + d*sigma_xi_sq/(d - n_tilde - 1))*(d/n_tilde + 2d/(d - n_tilde)) = " << r.lhs
           << "\n";
        os << "rhs  (m - 1 - d/n_tilde)*b                                                   = " << r.rhs << "\n";
        if (in.m < m_min) os << "verdict: debiasing cannot be beneficial (m <= 1 + d/n_tilde)\n";
        else os << "verdict: " << (r.holds ? "debiasing is beneficial" : "debiasing is not beneficial") << "\n";
        const int m_star = debias_beneficial_threshold(in.n_tilde, in.d, in.sigma_eta_sq, in.sigma_xi_sq, in.b);
        if (m_star > 0) os << "smallest m for which debiasing is beneficial: " << m_star << "\n";
    }
    res.text = os.str();
    return res;
}

}  // namespace tlab
