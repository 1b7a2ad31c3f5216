#pragma once

#include "tlab/debias.hpp"
#include "tlab/estimators.hpp"
#include "tlab/linalg.hpp"
#include "tlab/stats.hpp"
#include "tlab/taskmodel.hpp"
#include "tlab/theory.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

enum class AssumedMode { Identity, TrueH, DebiasKnown, DebiasTuned, ScaledTrueH };
enum class AlphaPolicy { Tuned, Formula };

inline const char* method_label(AssumedMode m) {
    switch (m) {
        case AssumedMode::Identity: return "transfer";
        case AssumedMode::TrueH: return "transfer_true_h";
        case AssumedMode::DebiasKnown: return "debias_known";
        case AssumedMode::DebiasTuned: return "debias_tuned";
        case AssumedMode::ScaledTrueH: return "debias_true_h";
    }
    return "?";
}

// Geometric spacing on each side of the interpolation threshold, plus the threshold itself.
inline std::vector<double> default_gamma_grid() {
    std::vector<double> g = log_grid(0.1, 0.9, 12);
    g.push_back(1.0);
    for (double x : log_grid(1.1, 5.1, 12)) g.push_back(x);
    return g;
}

struct SweepConfig {
    int d = 128;
    double gamma_tgt = 4.0;
    std::vector<double> gamma_src_grid = default_gamma_grid();
    std::vector<int> m_list{1, 3, 10};
    double sigma_eta_sq = 0.5;
    double sigma_xi_sq = 0.5;
    double sigma_eps_sq = 0.1;
    double b = 1.0;
    TaskRelationSpec relation;
    std::vector<AssumedMode> modes{AssumedMode::Identity};
    CovarianceSpec cov_x;
    CovarianceSpec cov_z;
    int runs_per_point = 200;
    int val_size = 1000;
    int test_size = 1000;
    std::vector<double> alpha_grid = default_alpha_grid();
    std::vector<double> rho_grid;  // empty: default grid for each source level
    std::uint64_t master_seed = 1;
    int threads = 1;
    bool baselines = true;
    bool compute_theory = false;
    // Bias-variance protocol
    int main_runs = 150;
    int sub_runs = 50;
    AlphaPolicy biasvar_alpha = AlphaPolicy::Tuned;
};

inline int n_tilde_for(double gamma_src, int d) {
    return std::max(1, static_cast<int>(std::floor(d / gamma_src + 1e-9)));
}

inline int n_for(double gamma_tgt, int d) {
    return std::max(1, static_cast<int>(std::floor(d / gamma_tgt + 1e-9)));
}

inline void validate(const SweepConfig& c) {
    if (c.d < 2) throw std::invalid_argument("config: d must be >= 2");
    if (!(c.gamma_tgt > 0.0)) throw std::invalid_argument("config: gamma_tgt must be > 0");
    if (c.gamma_src_grid.empty()) throw std::invalid_argument("config: gamma_src_grid is empty");
    for (double g : c.gamma_src_grid)
        if (!(g > 0.0)) throw std::invalid_argument("config: gamma_src values must be > 0");
    if (c.m_list.empty()) throw std::invalid_argument("config: m_list is empty");
    for (int m : c.m_list)
        if (m < 1) throw std::invalid_argument("config: m values must be >= 1");
    if (c.modes.empty()) throw std::invalid_argument("config: no assumed-relation mode");
    if (c.sigma_eta_sq < 0.0 || c.sigma_xi_sq < 0.0 || c.sigma_eps_sq < 0.0)
        throw std::invalid_argument("config: noise variances must be >= 0");
    if (!(c.b > 0.0)) throw std::invalid_argument("config: b must be > 0");
    if (c.runs_per_point < 1 || c.val_size < 1 || c.test_size < 1)
        throw std::invalid_argument("config: run and set sizes must be >= 1");
    if (c.main_runs < 1 || c.sub_runs < 2)
        throw std::invalid_argument("config: main_runs >= 1 and sub_runs >= 2 required");
    if (c.alpha_grid.empty()) throw std::invalid_argument("config: alpha_grid is empty");
    validate(c.relation, c.d);
    validate(c.cov_x);
    validate(c.cov_z);
}

// Selects alpha by validation MSE; ties go to the smaller alpha.
struct AlphaSelection {
    double alpha = 0.0;
    std::size_t index = 0;
    std::vector<double> val_errors;
};

inline AlphaSelection tune_alpha(const Dataset& val, const std::function<Vector(double)>& fit_fn,
                                 const std::vector<double>& alpha_grid) {
    if (alpha_grid.empty()) throw std::invalid_argument("tune_alpha: empty grid");
    if (val.outputs.size() == 0) throw std::invalid_argument("tune_alpha: empty validation set");
    AlphaSelection sel;
    sel.val_errors.reserve(alpha_grid.size());
    for (double a : alpha_grid) sel.val_errors.push_back(validation_mse(fit_fn(a), val));
    for (std::size_t i = 1; i < alpha_grid.size(); ++i)
        if (sel.val_errors[i] < sel.val_errors[sel.index]) sel.index = i;
    sel.alpha = alpha_grid[sel.index];
    return sel;
}

// Everything drawn for one (gamma index, run index): the target task.
struct TargetDraw {
    Vector beta;
    Dataset train, val, test;
};

// Everything drawn for one (gamma index, m index, run index): the sources.
struct SourceDraw {
    std::vector<Matrix> relations;           // true H_j
    std::vector<LinearPredictor> pretrained; // min-norm fits
};

struct RunResult {
    double error = 0.0;           // test-set MSE
    double error_analytic = 0.0;  // sigma^2 + ||beta_hat - beta||^2_{Sigma_x}
    double alpha = 0.0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    double theory = std::numeric_limits<double>::quiet_NaN();  // limiting error at the chosen alpha
    Vector coef;
};

struct BaselineResult {
    double min_norm = 0.0, ridge_tuned = 0.0, ridge_opt = 0.0, null_error = 0.0;
    double ridge_tuned_alpha = 0.0, ridge_opt_alpha = 0.0;
};

class Experiment {
public:
    explicit Experiment(SweepConfig cfg) : cfg_(std::move(cfg)), x_sampler_(cfg_.cov_x, cfg_.d),
                                           z_sampler_(cfg_.cov_z, cfg_.d) {
        validate(cfg_);
        n_ = n_for(cfg_.gamma_tgt, cfg_.d);
        sigma_x_ = build_covariance(cfg_.cov_x, cfg_.d);
        if (cfg_.relation.is_deterministic()) {
            Rng unused(0);
            shared_relation_ = std::make_shared<Matrix>(build_relation(cfg_.relation, cfg_.d, unused));
        }
    }

    const SweepConfig& config() const { return cfg_; }
    int n() const { return n_; }
    int n_tilde(std::size_t gi) const { return n_tilde_for(cfg_.gamma_src_grid.at(gi), cfg_.d); }
    const Matrix& sigma_x() const { return sigma_x_; }

    TargetDraw draw_target(std::size_t gi, std::uint64_t run, std::uint64_t sub = 0) const {
        Rng rng = make_rng(cfg_.master_seed, gi, std::uint64_t{0xFFFF}, run, sub, std::uint64_t{1});
        TargetDraw t;
        t.beta = sample_beta(cfg_.b, cfg_.d, rng);
        t.train = gen_dataset(t.beta, x_sampler_, cfg_.sigma_eps_sq, n_, rng);
        t.val = gen_dataset(t.beta, x_sampler_, cfg_.sigma_eps_sq, cfg_.val_size, rng);
        t.test = gen_dataset(t.beta, x_sampler_, cfg_.sigma_eps_sq, cfg_.test_size, rng);
        return t;
    }

    // Redraws the target datasets for a fixed beta (bias-variance sub-runs).
    TargetDraw draw_target_data(const Vector& beta, std::size_t gi, std::size_t mi, std::uint64_t run,
                                std::uint64_t sub) const {
        Rng rng = make_rng(cfg_.master_seed, gi, mi, run, sub, std::uint64_t{2});
        TargetDraw t;
        t.beta = beta;
        t.train = gen_dataset(beta, x_sampler_, cfg_.sigma_eps_sq, n_, rng);
        t.val = gen_dataset(beta, x_sampler_, cfg_.sigma_eps_sq, cfg_.val_size, rng);
        t.test = gen_dataset(beta, x_sampler_, cfg_.sigma_eps_sq, cfg_.test_size, rng);
        return t;
    }

    std::vector<Matrix> draw_relations(std::size_t gi, std::size_t mi, std::uint64_t run) const {
        const int m = cfg_.m_list.at(mi);
        std::vector<Matrix> rel;
        rel.reserve(m);
        Rng rng = make_rng(cfg_.master_seed, gi, mi, run, std::uint64_t{0}, std::uint64_t{3});
        for (int j = 0; j < m; ++j)
            rel.push_back(shared_relation_ ? *shared_relation_ : build_relation(cfg_.relation, cfg_.d, rng));
        return rel;
    }

    SourceDraw draw_sources(const Vector& beta, std::vector<Matrix> relations, std::size_t gi,
                            std::size_t mi, std::uint64_t run, std::uint64_t sub = 0) const {
        const int nt = n_tilde(gi);
        Rng rng = make_rng(cfg_.master_seed, gi, mi, run, sub, std::uint64_t{4});
        SourceDraw s;
        s.relations = std::move(relations);
        for (const Matrix& h : s.relations) {
            const Vector theta = make_source_theta(beta, h, cfg_.sigma_eta_sq, cfg_.d, rng);
            const Dataset src = gen_dataset(theta, z_sampler_, cfg_.sigma_xi_sq, nt, rng);
            s.pretrained.push_back(fit_min_norm_ls(src.inputs, src.outputs));
        }
        return s;
    }

    std::vector<Matrix> assumed_relations(AssumedMode mode, const std::vector<Matrix>& truth,
                                          std::size_t gi) const {
        const int d = cfg_.d;
        const double r = rho(n_tilde(gi), d);
        std::vector<Matrix> out;
        for (const Matrix& h : truth) {
            switch (mode) {
                case AssumedMode::Identity: out.push_back(Matrix::Identity(d, d)); break;
                case AssumedMode::TrueH: out.push_back(h); break;
                case AssumedMode::DebiasKnown: out.push_back(r * Matrix::Identity(d, d)); break;
                case AssumedMode::ScaledTrueH: out.push_back(r * h); break;
                case AssumedMode::DebiasTuned:
                    throw std::logic_error("assumed_relations: tuned mode has no fixed relation");
            }
        }
        return out;
    }

    // Formula-optimal alpha for the modes where the nonasymptotic theory applies.
    double formula_alpha(AssumedMode mode, std::size_t gi, int m) const {
        const int nt = n_tilde(gi), d = cfg_.d;
        SourceTaskParams sp;
        sp.n_tilde = nt;
        sp.sigma_eta_sq = cfg_.sigma_eta_sq;
        sp.sigma_xi_sq = cfg_.sigma_xi_sq;
        const std::vector<SourceTaskParams> sources(m, sp);
        const bool debias = mode == AssumedMode::DebiasKnown || mode == AssumedMode::ScaledTrueH;
        if (debias && region(d, nt) == Region::Overparam)
            return debias_optimal_alpha(sources, n_, d, cfg_.b, cfg_.sigma_eps_sq).alpha;
        const auto a = optimal_alpha_nonasym(sources, n_, d, cfg_.b, cfg_.sigma_eps_sq);
        if (a.alpha.is_infinite())
            throw std::domain_error("formula alpha: source size is in the threshold band");
        return a.alpha.value();
    }

    GeneralSettingParams theory_params(const std::vector<Matrix>& truth,
                                       const std::vector<Matrix>& assumed, std::size_t gi) const {
        GeneralSettingParams p;
        p.d = cfg_.d;
        p.gamma_tgt = static_cast<double>(cfg_.d) / n_;
        p.sigma_x = sigma_x_;
        p.true_relations = truth;
        p.assumed_relations = assumed;
        p.gamma_srcs.assign(truth.size(), static_cast<double>(cfg_.d) / n_tilde(gi));
        p.b = cfg_.b;
        p.sigma_eta_sq.assign(truth.size(), cfg_.sigma_eta_sq);
        p.sigma_xi_sq.assign(truth.size(), cfg_.sigma_xi_sq);
        p.sigma_eps_sq = cfg_.sigma_eps_sq;
        return p;
    }

    // Fits the transfer estimator for one mode on already drawn data.
    RunResult evaluate(AssumedMode mode, const TargetDraw& t, const SourceDraw& s, std::size_t gi,
                       AlphaPolicy policy = AlphaPolicy::Tuned,
                       const GeneralErrorModel* theory = nullptr) const {
        RunResult r;
        std::vector<Matrix> assumed;
        if (mode == AssumedMode::DebiasTuned) {
            DebiasGrid grid;
            grid.alpha_grid = cfg_.alpha_grid;
            grid.rho_grid = cfg_.rho_grid.empty()
                                ? default_rho_grid({cfg_.gamma_src_grid.at(gi)})
                                : cfg_.rho_grid;
            const ValidationSelection sel = tune_validation(t.train, t.val, s.pretrained, grid, n_);
            r.alpha = sel.alpha;
            r.rho = sel.rho;
            r.coef = sel.fit.predictor.coef;
            assumed = sel.fit.assumed_relations;
        } else {
            assumed = assumed_relations(mode, s.relations, gi);
            const TransferProblem prob(t.train.inputs, t.train.outputs, s.pretrained, assumed, n_);
            if (policy == AlphaPolicy::Formula) {
                r.alpha = formula_alpha(mode, gi, static_cast<int>(s.relations.size()));
            } else {
                r.alpha = tune_alpha(t.val, [&](double a) { return prob.coef(a); }, cfg_.alpha_grid)
                              .alpha;
            }
            r.coef = prob.coef(r.alpha);
        }
        const LinearPredictor pred{r.coef};
        r.error = test_error_mc(pred, t.test);
        r.error_analytic = test_error_analytic(pred, t.beta, sigma_x_, cfg_.sigma_eps_sq);
        if (cfg_.compute_theory) {
            std::unique_ptr<GeneralErrorModel> own;
            if (!theory) {
                own = std::make_unique<GeneralErrorModel>(theory_params(s.relations, assumed, gi));
                theory = own.get();
            }
            const auto e = theory->error(r.alpha);
            if (e.is_finite()) r.theory = e.value();
        }
        return r;
    }

    BaselineResult baselines(const TargetDraw& t) const {
        BaselineResult b;
        const Matrix& x = t.train.inputs;
        const Vector& y = t.train.outputs;
        auto err = [&](const Vector& coef) { return test_error_mc({coef}, t.test); };
        b.min_norm = err(fit_min_norm_ls(x, y).coef);
        const Matrix gram = x.transpose() * x;
        const Vector xty = x.transpose() * y;
        auto ridge = [&](double a) {
            Matrix m = gram;
            m.diagonal().array() += n_ * a;
            return Vector(Eigen::LLT<Matrix>(m).solve(xty));
        };
        b.ridge_tuned_alpha = tune_alpha(t.val, ridge, cfg_.alpha_grid).alpha;
        b.ridge_tuned = err(ridge(b.ridge_tuned_alpha));
        b.ridge_opt_alpha = ridge_optimal(cfg_.d, n_, cfg_.b, cfg_.sigma_eps_sq);
        b.ridge_opt = err(ridge(b.ridge_opt_alpha));
        b.null_error = err(Vector::Zero(cfg_.d));
        return b;
    }

private:
    SweepConfig cfg_;
    InputSampler x_sampler_, z_sampler_;
    int n_ = 1;
    Matrix sigma_x_;
    std::shared_ptr<Matrix> shared_relation_;
};

// Per-run outputs for one gamma point: results[mode][m index][run].
struct GammaPointResult {
    double gamma_src = 0.0;
    std::vector<std::vector<std::vector<RunResult>>> results;
    std::vector<BaselineResult> baselines;
};

inline GammaPointResult run_gamma_point(const Experiment& ex, std::size_t gi) {
    const SweepConfig& cfg = ex.config();
    const std::size_t runs = cfg.runs_per_point, nm = cfg.m_list.size(), nmodes = cfg.modes.size();
    GammaPointResult out;
    out.gamma_src = cfg.gamma_src_grid.at(gi);
    out.results.assign(nmodes, std::vector<std::vector<RunResult>>(nm, std::vector<RunResult>(runs)));
    if (cfg.baselines) out.baselines.resize(runs);

    // Theory models that do not depend on the run are built once per point.
    std::vector<std::vector<std::unique_ptr<GeneralErrorModel>>> shared(nmodes);
    if (cfg.compute_theory && cfg.relation.is_deterministic()) {
        for (std::size_t k = 0; k < nmodes; ++k) {
            shared[k].resize(nm);
            if (cfg.modes[k] == AssumedMode::DebiasTuned) continue;
            for (std::size_t mi = 0; mi < nm; ++mi) {
                const auto truth = ex.draw_relations(gi, mi, 0);
                shared[k][mi] = std::make_unique<GeneralErrorModel>(
                    ex.theory_params(truth, ex.assumed_relations(cfg.modes[k], truth, gi), gi));
            }
        }
    }

    parallel_for(runs, cfg.threads, [&](std::size_t run) {
        const TargetDraw t = ex.draw_target(gi, run);
        if (cfg.baselines) out.baselines[run] = ex.baselines(t);
        for (std::size_t mi = 0; mi < nm; ++mi) {
            const SourceDraw s = ex.draw_sources(t.beta, ex.draw_relations(gi, mi, run), gi, mi, run);
            for (std::size_t k = 0; k < nmodes; ++k) {
                const GeneralErrorModel* model =
                    shared[k].empty() ? nullptr : shared[k][mi].get();
                out.results[k][mi][run] = ex.evaluate(cfg.modes[k], t, s, gi, AlphaPolicy::Tuned, model);
                out.results[k][mi][run].coef.resize(0);
            }
        }
    });
    return out;
}

struct SweepRecord {
    double gamma_src = 0.0;
    int m = 0;
    std::string method;
    double mean_error = 0.0;
    double stderr = 0.0;
    double mean_alpha = 0.0;
    double mean_rho = std::numeric_limits<double>::quiet_NaN();
    double rho_stderr = std::numeric_limits<double>::quiet_NaN();
    int n_runs = 0;
    double mean_theory = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<SweepRecord> summarize(const GammaPointResult& g, const SweepConfig& cfg) {
    std::vector<SweepRecord> out;
    for (std::size_t k = 0; k < cfg.modes.size(); ++k) {
        for (std::size_t mi = 0; mi < cfg.m_list.size(); ++mi) {
            const auto& rs = g.results[k][mi];
            std::vector<double> e, a, r, th;
            for (const auto& x : rs) {
                e.push_back(x.error);
                a.push_back(x.alpha);
                if (!std::isnan(x.rho)) r.push_back(x.rho);
                if (!std::isnan(x.theory)) th.push_back(x.theory);
            }
            SweepRecord rec;
            rec.gamma_src = g.gamma_src;
            rec.m = cfg.m_list[mi];
            rec.method = method_label(cfg.modes[k]);
            const MeanStderr es = mean_stderr(e);
            rec.mean_error = es.mean;
            rec.stderr = es.stderr;
            rec.mean_alpha = mean_stderr(a).mean;
            if (!r.empty()) {
                const MeanStderr rr = mean_stderr(r);
                rec.mean_rho = rr.mean;
                rec.rho_stderr = rr.stderr;
            }
            if (th.size() == rs.size() && !th.empty()) rec.mean_theory = mean_stderr(th).mean;
            rec.n_runs = static_cast<int>(rs.size());
            out.push_back(rec);
        }
    }
    if (!g.baselines.empty()) {
        auto add = [&](const char* label, auto err_of, auto alpha_of) {
            std::vector<double> e, a;
            for (const auto& b : g.baselines) {
                e.push_back(err_of(b));
                a.push_back(alpha_of(b));
            }
            SweepRecord rec;
            rec.gamma_src = g.gamma_src;
            rec.m = 0;
            rec.method = label;
            const MeanStderr es = mean_stderr(e);
            rec.mean_error = es.mean;
            rec.stderr = es.stderr;
            rec.mean_alpha = mean_stderr(a).mean;
            rec.n_runs = static_cast<int>(e.size());
            out.push_back(rec);
        };
        const double nan = std::numeric_limits<double>::quiet_NaN();
        add("min_norm", [](const BaselineResult& b) { return b.min_norm; },
            [nan](const BaselineResult&) { return nan; });
        add("ridge_tuned", [](const BaselineResult& b) { return b.ridge_tuned; },
            [](const BaselineResult& b) { return b.ridge_tuned_alpha; });
        add("ridge_opt", [](const BaselineResult& b) { return b.ridge_opt; },
            [](const BaselineResult& b) { return b.ridge_opt_alpha; });
        add("null", [](const BaselineResult& b) { return b.null_error; },
            [nan](const BaselineResult&) { return nan; });
    }
    return out;
}

inline std::vector<SweepRecord> run_sweep(const SweepConfig& cfg) {
    const Experiment ex(cfg);
    std::vector<SweepRecord> out;
    for (std::size_t gi = 0; gi < cfg.gamma_src_grid.size(); ++gi) {
        const auto recs = summarize(run_gamma_point(ex, gi), cfg);
        out.insert(out.end(), recs.begin(), recs.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bias-variance decomposition

struct BiasVarRecord {
    double gamma_src = 0.0;
    int m = 0;
    std::string method;
    double bias_sq = 0.0;
    double variance = 0.0;
    double total_error = 0.0;
    double decomposition_residual = 0.0;
    double bias_sq_stderr = 0.0;
    double variance_stderr = 0.0;
    double total_stderr = 0.0;
    double residual_stderr = 0.0;
    int main_runs = 0;
    int sub_runs = 0;
};

// Per main run: fresh beta and task relations; per sub-run: fresh source and
// target data. The squared bias subtracts tr(Cov)/S so that it is unbiased
// for ||E[beta_hat] - beta||^2 at a finite number of sub-runs S.
inline std::vector<BiasVarRecord> bias_variance(const SweepConfig& cfg) {
    if (!cfg.cov_x.is_identity())
        throw std::invalid_argument("bias_variance: the protocol requires Sigma_x = I");
    const Experiment ex(cfg);
    std::vector<BiasVarRecord> out;
    const int S = cfg.sub_runs, M = cfg.main_runs;
    for (std::size_t gi = 0; gi < cfg.gamma_src_grid.size(); ++gi) {
        for (std::size_t mi = 0; mi < cfg.m_list.size(); ++mi) {
            for (AssumedMode mode : cfg.modes) {
                std::vector<double> bias(M), var(M), total(M), resid(M);
                parallel_for(M, cfg.threads, [&](std::size_t run) {
                    const TargetDraw base = ex.draw_target(gi, run);
                    const auto relations = ex.draw_relations(gi, mi, run);
                    Matrix coefs(cfg.d, S);
                    double mc = 0.0;
                    for (int s = 0; s < S; ++s) {
                        const TargetDraw t = ex.draw_target_data(base.beta, gi, mi, run, s + 1);
                        const SourceDraw src = ex.draw_sources(base.beta, relations, gi, mi, run, s + 1);
                        const RunResult r = ex.evaluate(mode, t, src, gi, cfg.biasvar_alpha);
                        coefs.col(s) = r.coef;
                        mc += r.error;
                    }
                    const Vector mean = coefs.rowwise().mean();
                    const double tr = (coefs.colwise() - mean).squaredNorm() / (S - 1.0);
                    bias[run] = (mean - base.beta).squaredNorm() - tr / S;
                    var[run] = tr;
                    total[run] = mc / S;
                    resid[run] = total[run] - cfg.sigma_eps_sq - bias[run] - var[run];
                });
                BiasVarRecord rec;
                rec.gamma_src = cfg.gamma_src_grid[gi];
                rec.m = cfg.m_list[mi];
                rec.method = method_label(mode);
                const MeanStderr b = mean_stderr(bias), v = mean_stderr(var),
                                 t = mean_stderr(total), r = mean_stderr(resid);
                rec.bias_sq = b.mean;
                rec.bias_sq_stderr = b.stderr;
                rec.variance = v.mean;
                rec.variance_stderr = v.stderr;
                rec.total_error = t.mean;
                rec.total_stderr = t.stderr;
                rec.decomposition_residual = std::abs(r.mean);
                rec.residual_stderr = r.stderr;
                rec.main_runs = M;
                rec.sub_runs = S;
                out.push_back(rec);
            }
        }
    }
    return out;
}

}  // namespace tlab
