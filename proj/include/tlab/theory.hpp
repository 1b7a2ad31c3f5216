#pragma once

#include "tlab/linalg.hpp"
#include "tlab/stats.hpp"
#include "tlab/taskmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

// A quantity that is either finite or formally infinite (the threshold band
// of the piecewise formulas). Never encoded as a large float.
template <class T>
class OrInfinite {
public:
    OrInfinite(T v) : value_(std::move(v)) {}
    static OrInfinite infinite() { return OrInfinite(); }

    bool is_infinite() const { return !value_.has_value(); }
    bool is_finite() const { return value_.has_value(); }
    const T& value() const {
        if (!value_) throw std::domain_error("value is infinite (threshold region)");
        return *value_;
    }

private:
    OrInfinite() = default;
    std::optional<T> value_;
};

enum class Region { Underparam, Threshold, Overparam };

inline Region region(int d, int n_tilde) {
    if (d <= n_tilde - 2) return Region::Underparam;
    if (d >= n_tilde + 2) return Region::Overparam;
    return Region::Threshold;
}

inline const char* to_string(Region r) {
    switch (r) {
        case Region::Underparam: return "underparam";
        case Region::Threshold: return "threshold";
        case Region::Overparam: return "overparam";
    }
    return "?";
}

inline double rho(int n_tilde, int d) {
    if (n_tilde < 1 || d < 1) throw std::invalid_argument("rho: counts must be positive");
    return n_tilde >= d ? 1.0 : static_cast<double>(n_tilde) / d;
}

inline double rho_inf(double gamma_src) {
    if (!(gamma_src > 0.0)) throw std::invalid_argument("rho_inf: gamma must be > 0");
    return gamma_src <= 1.0 ? 1.0 : 1.0 / gamma_src;
}

// g(-phi; gamma), Stieltjes transform of the Marchenko-Pastur law, evaluated
// in the rationalized form that avoids cancellation for large phi.
inline double stieltjes_mp(double phi, double gamma) {
    if (!(phi > 0.0) || !(gamma > 0.0))
        throw std::invalid_argument("stieltjes_mp: phi and gamma must be > 0");
    const double zeta = phi + 1.0 - gamma;
    const double root = std::sqrt(zeta * zeta + 4.0 * gamma * phi);
    if (zeta >= 0.0) return 2.0 / (root + zeta);
    // For negative zeta the direct form is the stable one.
    return (root - zeta) / (2.0 * gamma * phi);
}

// ---------------------------------------------------------------------------
// Fixed points of the general-case error

struct FixedPointSolution {
    double c = 1.0;
    double c_prime = 0.0;
    double s = 1.0;
    double residual_c = 0.0;
    double residual_c_prime = 0.0;
};

inline double trace_w_resolvent(double c, double alpha, const Vector& w) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) acc += w(i) / (c * w(i) + alpha);
    return acc;
}

// Solves 1/c - 1 = (gamma/d) Tr(W (cW + alpha I)^{-1}) given the spectrum of W.
// Written as c + c (gamma/d) Tr(...) = 1, whose left side increases strictly in c.
inline double solve_c_spectral(double alpha, const Vector& w, double gamma, int d,
                               double* residual = nullptr) {
    if (!(alpha > 0.0)) throw std::invalid_argument("solve_c: alpha must be > 0");
    if (!(gamma >= 0.0)) throw std::invalid_argument("solve_c: gamma must be >= 0");
    if (w.size() && w.minCoeff() < 0.0) throw std::invalid_argument("solve_c: W must be PSD");
    const double k = gamma / d;
    auto g = [&](double c) { return c + c * k * trace_w_resolvent(c, alpha, w) - 1.0; };
    double lo = 1e-14, hi = 1.0;
    if (g(lo) > 0.0) throw std::runtime_error("solve_c: root below lower bracket");
    if (g(hi) <= 0.0) {
        lo = hi;
    } else {
        for (int it = 0; it < tolerances().max_bisection_iters; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            (g(mid) > 0.0 ? hi : lo) = mid;
        }
    }
    // Newton polish on the increasing form; keeps the bracket.
    double c = 0.5 * (lo + hi);
    for (int it = 0; it < 3; ++it) {
        double t = 0.0, dt = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double den = c * w(i) + alpha;
            t += w(i) / den;
            dt += w(i) * alpha / (den * den);  // d/dc [c w/(c w + a)]
        }
        const double f = c + c * k * t - 1.0;
        const double fp = 1.0 + k * dt;
        const double next = c - f / fp;
        if (!(next > 0.0) || next > 1.0) break;
        c = next;
    }
    const double res = std::abs(1.0 / c - 1.0 - k * trace_w_resolvent(c, alpha, w));
    if (residual) *residual = res;
    if (!(res < 1e-10)) throw std::runtime_error("solve_c: residual " + std::to_string(res));
    return c;
}

inline double solve_c(double alpha, const Matrix& w, double gamma, int d) {
    return solve_c_spectral(alpha, eig_sym(w).eigenvalues, gamma, d);
}

inline double solve_c_prime_spectral(double alpha, const Vector& w, double gamma, int d, double c,
                                     double* residual = nullptr) {
    double fro = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double q = w(i) / (c * w(i) + alpha);
        fro += q * q;
    }
    const double num = gamma / d * fro;
    const double den = 1.0 / (c * c) - num;
    if (!(den > 0.0))
        throw std::runtime_error("solve_c_prime: non-positive denominator (c inconsistent)");
    const double cp = num / den;
    if (residual) *residual = std::abs(cp * den - num) / std::max(num, std::numeric_limits<double>::min());
    return cp;
}

inline double solve_c_prime(double alpha, const Matrix& w, double gamma, int d, double c) {
    return solve_c_prime_spectral(alpha, eig_sym(w).eigenvalues, gamma, d, c);
}

inline FixedPointSolution solve_fixed_points(double alpha, const Vector& w, double gamma, int d) {
    FixedPointSolution fp;
    fp.c = solve_c_spectral(alpha, w, gamma, d, &fp.residual_c);
    fp.c_prime = solve_c_prime_spectral(alpha, w, gamma, d, fp.c, &fp.residual_c_prime);
    fp.s = fp.c_prime + 1.0;
    return fp;
}

// ---------------------------------------------------------------------------
// Limiting error matrices

inline double kappa_of(const Matrix& h) {
    return h.squaredNorm() / static_cast<double>(h.rows());
}

inline OrInfinite<Matrix> gamma_single(double gamma_src, const Matrix& h, const Matrix& h_assumed,
                                       double b, double sigma_eta_sq, double sigma_xi_sq, int d,
                                       double kappa_h) {
    if (h.rows() != d || h.cols() != d || h_assumed.rows() != d || h_assumed.cols() != d)
        throw std::invalid_argument("gamma_single: dimension mismatch");
    if (!(gamma_src > 0.0)) throw std::invalid_argument("gamma_single: gamma_src must be > 0");
    if (gamma_src == 1.0) return OrInfinite<Matrix>::infinite();
    const Matrix delta = h - h_assumed;
    const double g = gamma_src;
    Matrix out(d, d);
    if (g < 1.0) {
        out.noalias() = (b / d) * (delta * delta.transpose());
        out.diagonal().array() += (sigma_eta_sq + g * sigma_xi_sq / (1.0 - g)) / d;
        return out;
    }
    const Matrix hht = h * h.transpose();
    out.noalias() = (b / (d * g)) * (delta * delta.transpose());
    const double w = b * (g - 1.0) / (d * g * g);
    out.noalias() += w * (g * (h_assumed * h_assumed.transpose()) - hht);
    out.diagonal().array() += (sigma_eta_sq + g * sigma_xi_sq / (g - 1.0)) / (d * g) + w * kappa_h;
    out.diagonal() -= (w / d) * hht.diagonal();
    return out;
}

struct GeneralSettingParams {
    int d = 128;
    double gamma_tgt = 4.0;
    Matrix sigma_x;
    std::vector<Matrix> true_relations;
    std::vector<Matrix> assumed_relations;
    std::vector<double> gamma_srcs;
    double b = 1.0;
    std::vector<double> sigma_eta_sq;
    std::vector<double> sigma_xi_sq;
    double sigma_eps_sq = 0.1;
    std::vector<double> kappa_h;  // empty: (1/d)||H_j||_F^2
};

inline void validate(const GeneralSettingParams& p) {
    const std::size_t m = p.assumed_relations.size();
    if (m == 0) throw std::invalid_argument("general setting: no sources");
    if (p.true_relations.size() != m || p.gamma_srcs.size() != m || p.sigma_eta_sq.size() != m ||
        p.sigma_xi_sq.size() != m || (!p.kappa_h.empty() && p.kappa_h.size() != m))
        throw std::invalid_argument("general setting: per-source list lengths differ");
    if (p.sigma_x.rows() != p.d || p.sigma_x.cols() != p.d)
        throw std::invalid_argument("general setting: Sigma_x dimension mismatch");
    if (!relations_full_rank(p.assumed_relations))
        throw std::invalid_argument(
            "general setting: assumed relations not jointly full rank (sum of H^T H is singular)");
}

inline Matrix relation_gram(const std::vector<Matrix>& relations) {
    const Eigen::Index d = relations.front().cols();
    Matrix gram = Matrix::Zero(d, d);
    for (const auto& h : relations) gram.noalias() += h.transpose() * h;
    return gram;
}

inline Matrix inverse_sqrt_gram(const Matrix& gram) {
    double c = 0.0;
    if (is_scaled_identity(gram, &c))
        return Matrix::Identity(gram.rows(), gram.cols()) / std::sqrt(c);
    return sym_pd_inv_sqrt(gram);
}

namespace detail {
inline OrInfinite<Matrix> gamma_multi_inner(const GeneralSettingParams& p, const Matrix& r_inv) {
    const int d = p.d;
    const std::size_t m = p.assumed_relations.size();
    Matrix inner = Matrix::Zero(d, d);
    Matrix a_sum = Matrix::Zero(d, d);
    Matrix a_self = Matrix::Zero(d, d);
    for (std::size_t j = 0; j < m; ++j) {
        const Matrix& ht = p.assumed_relations[j];
        const double kappa = p.kappa_h.empty() ? kappa_of(p.true_relations[j]) : p.kappa_h[j];
        auto single = gamma_single(p.gamma_srcs[j], p.true_relations[j], ht, p.b,
                                   p.sigma_eta_sq[j], p.sigma_xi_sq[j], d, kappa);
        if (single.is_infinite()) return OrInfinite<Matrix>::infinite();
        inner.noalias() += ht.transpose() * single.value() * ht;
        if (m > 1) {
            const Matrix a =
                ht.transpose() * (rho_inf(p.gamma_srcs[j]) * p.true_relations[j] - ht);
            a_sum += a;
            a_self.noalias() += a * a.transpose();
        }
    }
    if (m > 1) {
        // sum_{j != l} A_j A_l^T = (sum A)(sum A)^T - sum A_j A_j^T
        inner.noalias() += (p.b / d) * (a_sum * a_sum.transpose());
        inner -= (p.b / d) * a_self;
    }
    Matrix out = r_inv * inner * r_inv;
    return Matrix(0.5 * (out + out.transpose()));
}
}  // namespace detail

inline OrInfinite<Matrix> gamma_multi(const GeneralSettingParams& p) {
    validate(p);
    return detail::gamma_multi_inner(p, inverse_sqrt_gram(relation_gram(p.assumed_relations)));
}

// Evaluates the general-case limiting error for many alpha values; the
// alpha-independent parts (W spectrum, Gamma^m in the W eigenbasis) are built once.
class GeneralErrorModel {
public:
    explicit GeneralErrorModel(const GeneralSettingParams& p)
        : d_(p.d), gamma_(p.gamma_tgt), sigma_eps_sq_(p.sigma_eps_sq) {
        validate(p);
        const Matrix r_inv = inverse_sqrt_gram(relation_gram(p.assumed_relations));
        const Matrix w = r_inv * p.sigma_x * r_inv;
        double scale = 0.0;
        Matrix v;
        if (is_scaled_identity(w, &scale)) {
            w_eigs_ = Vector::Constant(d_, scale);
            v = Matrix::Identity(d_, d_);
        } else {
            Spectrum sp = eig_sym(w);
            w_eigs_ = sp.eigenvalues.cwiseMax(0.0);
            v = std::move(sp.eigenvectors);
        }
        auto gm = detail::gamma_multi_inner(p, r_inv);
        if (gm.is_infinite()) {
            infinite_ = true;
            return;
        }
        gamma_diag_ = (v.transpose() * gm.value() * v).diagonal();
    }

    bool is_infinite() const { return infinite_; }
    const Vector& w_eigenvalues() const { return w_eigs_; }

    FixedPointSolution fixed_points(double alpha) const {
        return solve_fixed_points(alpha, w_eigs_, gamma_, d_);
    }

    OrInfinite<double> error(double alpha) const {
        if (!(alpha > 0.0)) throw std::invalid_argument("expected_error_general: alpha must be > 0");
        if (infinite_) return OrInfinite<double>::infinite();
        const FixedPointSolution fp = fixed_points(alpha);
        double t1 = 0.0, t2 = 0.0;
        for (int i = 0; i < d_; ++i) {
            const double w = w_eigs_(i);
            const double om = fp.c * w + alpha;
            t1 += w / om;
            // sigma^2 * gamma * [(alpha^2/(gamma sigma^2)) G_ii - alpha/d] * s w / om^2
            t2 += (alpha * alpha * gamma_diag_(i) - sigma_eps_sq_ * gamma_ * alpha / d_) * fp.s * w /
                  (om * om);
        }
        return sigma_eps_sq_ * (1.0 + gamma_ * t1 / d_) + t2;
    }

private:
    int d_;
    double gamma_;
    double sigma_eps_sq_;
    bool infinite_ = false;
    Vector w_eigs_;
    Vector gamma_diag_;
};

inline OrInfinite<double> expected_error_general(const GeneralSettingParams& p, double alpha) {
    return GeneralErrorModel(p).error(alpha);
}

// ---------------------------------------------------------------------------
// Simple (orthonormal, well-specified, equal source size) setting

struct SimpleSettingParams {
    double gamma_tgt = 4.0;
    double gamma_src = 2.0;
    double m = 1;
    double b = 1.0;
    double sigma_eta_sq = 0.5;
    double sigma_xi_sq = 0.5;
    double sigma_eps_sq = 0.1;
};

inline void validate(const SimpleSettingParams& p) {
    if (!(p.gamma_tgt > 0.0) || !(p.gamma_src > 0.0) || !(p.m >= 1) || !(p.b > 0.0) ||
        p.sigma_eta_sq < 0.0 || p.sigma_xi_sq < 0.0 || p.sigma_eps_sq < 0.0)
        throw std::invalid_argument("simple setting: parameter out of range");
}

inline double alpha_inf(const SimpleSettingParams& p) {
    validate(p);
    const double g = p.gamma_src;
    if (g == 1.0) throw std::domain_error("alpha_inf: gamma_src = 1 is the threshold");
    double den;
    if (g < 1.0) {
        den = p.sigma_eta_sq + g * p.sigma_xi_sq / (1.0 - g);
    } else {
        const double t = (1.0 - g) / g;
        den = (g - 1.0) / g * p.b + (p.m - 1.0) * p.b * t * t +
              (p.sigma_eta_sq + g * p.sigma_xi_sq / (g - 1.0)) / g;
    }
    return p.sigma_eps_sq * p.gamma_tgt / den;
}

inline double error_simple_asymptotic(const SimpleSettingParams& p) {
    if (p.gamma_src == 1.0)
        throw std::domain_error("error_simple_asymptotic: gamma_src = 1 is the threshold");
    const double a = alpha_inf(p);
    return p.sigma_eps_sq * (1.0 + p.gamma_tgt * stieltjes_mp(p.m * a, p.gamma_tgt));
}

// lim_{m -> inf} m * alpha_inf for overparameterized sources.
inline double m_alpha_inf_limit(const SimpleSettingParams& p) {
    validate(p);
    if (!(p.gamma_src > 1.0)) throw std::domain_error("m_alpha_inf_limit: needs gamma_src > 1");
    const double t = (1.0 - p.gamma_src) / p.gamma_src;
    return p.sigma_eps_sq * p.gamma_tgt / (p.b * t * t);
}

inline double ridge_optimal(int d, int n, double b, double sigma_eps_sq) {
    if (d < 1 || n < 1 || !(b > 0.0) || sigma_eps_sq < 0.0)
        throw std::invalid_argument("ridge_optimal: parameter out of range");
    return d * sigma_eps_sq / (n * b);
}

inline double ridge_error_asymptotic(double gamma_tgt, double b, double sigma_eps_sq) {
    return sigma_eps_sq * (1.0 + gamma_tgt * stieltjes_mp(gamma_tgt * sigma_eps_sq / b, gamma_tgt));
}

// ---------------------------------------------------------------------------
// Nonasymptotic optimal tuning

inline OrInfinite<double> source_term_c(int n_tilde, int d, double b, double sigma_eta_sq,
                                        double sigma_xi_sq) {
    switch (region(d, n_tilde)) {
        case Region::Underparam:
            return sigma_eta_sq / d + sigma_xi_sq / (n_tilde - d - 1.0);
        case Region::Threshold: return OrInfinite<double>::infinite();
        case Region::Overparam: {
            const double r = static_cast<double>(n_tilde) / d;
            return (1.0 - r) * b / d + r * (sigma_eta_sq / d + sigma_xi_sq / (d - n_tilde - 1.0));
        }
    }
    throw std::logic_error("source_term_c: unknown region");
}

struct NonasymAlpha {
    OrInfinite<double> alpha = OrInfinite<double>::infinite();
    std::vector<OrInfinite<double>> c;
};

inline NonasymAlpha optimal_alpha_nonasym(const std::vector<SourceTaskParams>& sources, int n, int d,
                                          double b, double sigma_eps_sq) {
    if (sources.empty()) throw std::invalid_argument("optimal_alpha_nonasym: no sources");
    NonasymAlpha out;
    double c_sum = 0.0;
    bool infinite = false;
    for (const auto& s : sources) {
        out.c.push_back(source_term_c(s.n_tilde, d, b, s.sigma_eta_sq, s.sigma_xi_sq));
        if (out.c.back().is_infinite()) infinite = true;
        else c_sum += out.c.back().value();
    }
    if (infinite) return out;
    double cross = 0.0;
    for (std::size_t j = 0; j < sources.size(); ++j)
        for (std::size_t l = 0; l < j; ++l)
            cross += (1.0 - rho(sources[j].n_tilde, d)) * (1.0 - rho(sources[l].n_tilde, d));
    const double m = static_cast<double>(sources.size());
    out.alpha = m * sigma_eps_sq / (n * (c_sum + 2.0 * b / d * cross));
    return out;
}

// Closed form for m sources of identical size.
inline OrInfinite<double> optimal_alpha_equal_sources(int m, int n_tilde, int n, int d, double b,
                                                      double sigma_eta_sq, double sigma_xi_sq,
                                                      double sigma_eps_sq) {
    const auto c = source_term_c(n_tilde, d, b, sigma_eta_sq, sigma_xi_sq);
    if (c.is_infinite()) return OrInfinite<double>::infinite();
    const double r = rho(n_tilde, d);
    return sigma_eps_sq / (n * c.value() + b * n / d * (m - 1.0) * (1.0 - r) * (1.0 - r));
}

// Per-draw values of Tr[(X^T X + scale I)^{-1}] for several scales on shared draws.
template <class Gen>
std::vector<std::vector<double>> wishart_trace_draws(const std::vector<double>& scales, int n,
                                                     int d, int draws, Gen& gen) {
    for (double s : scales)
        if (!(s > 0.0)) throw std::invalid_argument("wishart trace: scale must be > 0");
    if (n < 1 || d < 1 || draws < 1)
        throw std::invalid_argument("wishart trace: counts must be positive");
    const std::uint64_t base = gen();
    std::vector<std::vector<double>> out(scales.size(), std::vector<double>(draws));
    for (int k = 0; k < draws; ++k) {
        Rng rng = make_rng(base, static_cast<std::uint64_t>(k));
        const Matrix x = standard_normal(n, d, rng);
        // Nonzero eigenvalues of X^T X coincide with those of the smaller Gram matrix.
        const Matrix gram = n < d ? Matrix(x * x.transpose()) : Matrix(x.transpose() * x);
        Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
        const Vector& lam = es.eigenvalues();
        const int zeros = d - static_cast<int>(lam.size());
        for (std::size_t i = 0; i < scales.size(); ++i) {
            double t = zeros / scales[i];
            for (Eigen::Index q = 0; q < lam.size(); ++q) t += 1.0 / (std::max(lam(q), 0.0) + scales[i]);
            out[i][k] = t;
        }
    }
    return out;
}

template <class Gen>
MeanStderr error_nonasym_trace(double scale, int n, int d, double sigma_eps_sq, int mc_draws,
                               Gen& gen) {
    const auto traces = wishart_trace_draws({scale}, n, d, mc_draws, gen);
    MeanStderr t = mean_stderr(traces[0]);
    t.mean = sigma_eps_sq * (1.0 + t.mean);
    t.stderr *= sigma_eps_sq;
    t.sd *= sigma_eps_sq;
    return t;
}

// ---------------------------------------------------------------------------
// Decision conditions

struct InequalityReport {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

inline InequalityReport negative_transfer_report(int m, int n_tilde, int d, double sigma_eta_sq,
                                                 double sigma_xi_sq, double b) {
    if (region(d, n_tilde) == Region::Threshold)
        throw std::domain_error("negative_transfer_check: d is in the threshold band of n_tilde");
    if (m < 1) throw std::invalid_argument("negative_transfer_check: m must be >= 1");
    const double r = rho(n_tilde, d);
    InequalityReport rep;
    rep.lhs = sigma_eta_sq + d * sigma_xi_sq / (std::abs(d - n_tilde) - 1.0);
    rep.rhs = b * (m + (m - 1.0) * (1.0 - r));
    rep.holds = rep.lhs < rep.rhs;
    return rep;
}

// True when transfer with m pretrained models beats optimally tuned ridge.
inline bool negative_transfer_check(int m, int n_tilde, int d, double sigma_eta_sq,
                                    double sigma_xi_sq, double b) {
    return negative_transfer_report(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b).holds;
}

inline InequalityReport debias_beneficial_report(int m, int n_tilde, int d, double sigma_eta_sq,
                                                 double sigma_xi_sq, double b) {
    if (d < n_tilde + 2)
        throw std::domain_error("debias_beneficial_check: requires d >= n_tilde + 2");
    const double ratio = static_cast<double>(d) / n_tilde;
    InequalityReport rep;
    rep.lhs = (sigma_eta_sq + d * sigma_xi_sq / (d - n_tilde - 1.0)) *
              (ratio + 2.0 * d / static_cast<double>(d - n_tilde));
    rep.rhs = (m - 1.0 - ratio) * b;
    rep.holds = rep.lhs < rep.rhs;
    return rep;
}

inline bool debias_beneficial_check(int m, int n_tilde, int d, double sigma_eta_sq,
                                    double sigma_xi_sq, double b) {
    return debias_beneficial_report(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b).holds;
}

// Smallest m exceeding 1 + d/n_tilde (necessary for beneficial debiasing).
inline int debias_min_models(int n_tilde, int d) {
    return static_cast<int>(std::floor(1.0 + static_cast<double>(d) / n_tilde)) + 1;
}

// Smallest m for which debiasing is beneficial, searched up to m_max; 0 if none.
inline int debias_beneficial_threshold(int n_tilde, int d, double sigma_eta_sq, double sigma_xi_sq,
                                       double b, int m_max = 100000) {
    for (int m = 1; m <= m_max; ++m)
        if (debias_beneficial_check(m, n_tilde, d, sigma_eta_sq, sigma_xi_sq, b)) return m;
    return 0;
}

// ---------------------------------------------------------------------------
// Debiased transfer

inline double source_term_c_debias(int n_tilde, int d, double b, double sigma_eta_sq,
                                   double sigma_xi_sq) {
    if (d < n_tilde + 2)
        throw std::domain_error("debias: every source must satisfy d >= n_tilde + 2");
    const double r = static_cast<double>(n_tilde) / d;
    return r * ((1.0 - r) * b / d + sigma_eta_sq / d + sigma_xi_sq / (d - n_tilde - 1.0));
}

struct DebiasAlpha {
    double alpha = 0.0;
    std::vector<double> c_deb;
    double scale_factor = 0.0;  // sum_j n_tilde_j^2 / d^2
};

inline DebiasAlpha debias_optimal_alpha(const std::vector<SourceTaskParams>& sources, int n, int d,
                                        double b, double sigma_eps_sq) {
    if (sources.empty()) throw std::invalid_argument("debias_optimal_alpha: no sources");
    DebiasAlpha out;
    double num = 0.0, den = 0.0;
    for (const auto& s : sources) {
        const double c = source_term_c_debias(s.n_tilde, d, b, s.sigma_eta_sq, s.sigma_xi_sq);
        out.c_deb.push_back(c);
        const double nt2 = static_cast<double>(s.n_tilde) * s.n_tilde;
        num += nt2;
        den += nt2 * c;
        out.scale_factor += nt2 / (static_cast<double>(d) * d);
    }
    out.alpha = sigma_eps_sq * num / (n * den);
    return out;
}

inline double debias_alpha_inf(const SimpleSettingParams& p) {
    validate(p);
    const double g = p.gamma_src;
    if (!(g > 1.0)) throw std::domain_error("debias: requires gamma_src > 1");
    return p.gamma_tgt * p.sigma_eps_sq * g /
           ((g - 1.0) / g * p.b + p.sigma_eta_sq + g / (g - 1.0) * p.sigma_xi_sq);
}

inline double debias_error_asymptotic(const SimpleSettingParams& p) {
    const double a = debias_alpha_inf(p);
    return p.sigma_eps_sq *
           (1.0 + p.gamma_tgt * stieltjes_mp(p.m * a / (p.gamma_src * p.gamma_src), p.gamma_tgt));
}

// ---------------------------------------------------------------------------
// Pretrained-model moments given beta

struct PretrainedMoments {
    Vector mean;
    OrInfinite<Matrix> cov = OrInfinite<Matrix>::infinite();
};

inline PretrainedMoments pretrained_mean_cov(const Vector& beta, const Matrix& h, int n_tilde,
                                             int d, double sigma_eta_sq, double sigma_xi_sq) {
    if (h.rows() != d || h.cols() != beta.size())
        throw std::invalid_argument("pretrained_mean_cov: dimension mismatch");
    PretrainedMoments out;
    const Vector hb = h * beta;
    out.mean = rho(n_tilde, d) * hb;
    switch (region(d, n_tilde)) {
        case Region::Threshold: break;
        case Region::Underparam:
            out.cov = Matrix(Matrix::Identity(d, d) *
                             (sigma_eta_sq / d + sigma_xi_sq / (n_tilde - d - 1.0)));
            break;
        case Region::Overparam: {
            const double dd = d;
            const double r = n_tilde / dd;
            Matrix c = (dd - n_tilde) / (dd * (dd + 1.0)) * (hb * hb.transpose());
            const double energy = hb.squaredNorm();
            const double w = (dd - n_tilde) / (dd * dd - 1.0);
            for (int k = 0; k < d; ++k) c(k, k) += w * (energy - hb(k) * hb(k));
            c.diagonal().array() += sigma_eta_sq / dd + sigma_xi_sq / (dd - n_tilde - 1.0);
            out.cov = Matrix(r * c);
            break;
        }
    }
    return out;
}

// Exact finite-d covariance for isotropic Gaussian source inputs. The row space
// of the source design is then a uniformly random rank-n_tilde projection P, and
// Cov(P theta) = c1 theta theta^T + c2 ||theta||^2 I follows from its fourth
// moments. Agrees with pretrained_mean_cov in trace and as d grows, but not
// entrywise at small d.
inline OrInfinite<Matrix> pretrained_cov_exact(const Vector& beta, const Matrix& h, int n_tilde,
                                               int d, double sigma_eta_sq, double sigma_xi_sq) {
    if (h.rows() != d || h.cols() != beta.size())
        throw std::invalid_argument("pretrained_cov_exact: dimension mismatch");
    switch (region(d, n_tilde)) {
        case Region::Threshold: return OrInfinite<Matrix>::infinite();
        case Region::Underparam:
            return Matrix(Matrix::Identity(d, d) *
                          (sigma_eta_sq / d + sigma_xi_sq / (n_tilde - d - 1.0)));
        case Region::Overparam: break;
    }
    const double dd = d, k = n_tilde;
    const Vector hb = h * beta;
    const double c2 = k * (dd - k) / (dd * (dd + 2.0) * (dd - 1.0));
    const double c1 = k * (dd - k) / (dd * dd) * (dd - 2.0) / ((dd + 2.0) * (dd - 1.0));
    Matrix c = c1 * (hb * hb.transpose());
    c.diagonal().array() += c2 * hb.squaredNorm() + k / dd * sigma_eta_sq / dd +
                            k / dd * sigma_xi_sq / (dd - k - 1.0);
    return c;
}

// ---------------------------------------------------------------------------
// Anisotropic shrinkage of overparameterized min-norm models

inline double solve_q0(const Vector& eigenvalues, double gamma) {
    if (!(gamma > 1.0)) throw std::invalid_argument("solve_q0: gamma must be > 1");
    if (eigenvalues.size() == 0 || !(eigenvalues.minCoeff() > 0.0))
        throw std::invalid_argument("solve_q0: eigenvalues must be positive");
    const double target = 1.0 - 1.0 / gamma;
    const double dd = static_cast<double>(eigenvalues.size());
    auto f = [&](double q) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) acc += 1.0 / (1.0 + q * eigenvalues(i));
        return acc / dd - target;
    };
    double lo = 0.0, hi = 1.0;
    while (f(hi) > 0.0) hi *= 2.0;
    for (int it = 0; it < tolerances().max_bisection_iters; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline Matrix shrinkage_operator(const Matrix& sigma_z, double gamma) {
    const Spectrum sp = eig_sym(sigma_z);
    if (!(sp.eigenvalues.minCoeff() > 0.0))
        throw std::invalid_argument("shrinkage_operator: Sigma_z must be positive definite");
    const double q0 = solve_q0(sp.eigenvalues, gamma);
    const Vector f = (q0 * sp.eigenvalues.array() / (1.0 + q0 * sp.eigenvalues.array())).matrix();
    Matrix out = sp.eigenvectors * f.asDiagonal() * sp.eigenvectors.transpose();
    return 0.5 * (out + out.transpose());
}

}  // namespace tlab
