// tlab: command-line frontend for transfer-learning sweeps, limiting-error
// curves, bias-variance decompositions and the decision conditions.

#include "tlab/config.hpp"
#include "tlab/csv.hpp"
#include "tlab/experiments.hpp"
#include "tlab/report.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr const char* kVersion = "1.0.0";

struct CommonOptions {
    std::string config_path;
    std::string out_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<int> threads;
};

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

tlab::ToolConfig load(const CommonOptions& o) {
    tlab::ToolConfig tc = tlab::load_config(o.config_path);
    tlab::SweepConfig& c = tc.sweep;
    if (o.seed) c.master_seed = *o.seed;
    if (o.runs) {
        if (*o.runs < 1) throw tlab::ConfigError({"--runs: must be >= 1"});
        c.runs_per_point = *o.runs;
        c.main_runs = *o.runs;
    }
    if (o.threads) {
        if (*o.threads < 1) throw tlab::ConfigError({"--threads: must be >= 1"});
        c.threads = *o.threads;
    } else if (!tc.threads_given) {
        c.threads = tlab::default_threads();
    }
    return tc;
}

// Grids actually used per gamma point, recorded in the manifest.
tlab::Json point_grids(const tlab::SweepConfig& c) {
    tlab::Json pts = tlab::Json::array();
    const int n = tlab::n_for(c.gamma_tgt, c.d);
    for (double g : c.gamma_src_grid) {
        tlab::Json p;
        p["gamma_src"] = g;
        p["n_tilde"] = tlab::n_tilde_for(g, c.d);
        p["n"] = n;
        p["region"] = tlab::to_string(tlab::region(c.d, tlab::n_tilde_for(g, c.d)));
        for (tlab::AssumedMode m : c.modes) {
            if (m == tlab::AssumedMode::DebiasTuned) {
                p["rho_grid"] = c.rho_grid.empty() ? tlab::default_rho_grid({g}) : c.rho_grid;
                break;
            }
        }
        pts.push_back(p);
    }
    return pts;
}

void write_manifest(const std::string& out_path, const std::string& command, const tlab::ToolConfig& tc) {
    tlab::Json m;
    m["tool"] = "tlab";
    m["version"] = kVersion;
    m["command"] = command;
    m["timestamp"] = utc_timestamp();
    m["master_seed"] = tc.sweep.master_seed;
    m["config"] = tc.echo;
    m["effective"] = tlab::effective_json(tc.sweep);
    m["points"] = point_grids(tc.sweep);
    std::ofstream f(out_path + ".manifest.json");
    if (!f) throw std::runtime_error("cannot write " + out_path + ".manifest.json");
    f << m.dump(2) << '\n';
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open output file " + path);
    return f;
}

void cmd_sweep(const CommonOptions& o) {
    const tlab::ToolConfig tc = load(o);
    const auto records = tlab::run_sweep(tc.sweep);
    std::ofstream f = open_out(o.out_path);
    tlab::CsvWriter w(f, {"gamma_src", "m", "method", "mean_error", "stderr", "mean_alpha", "mean_rho", "n_runs"});
    for (const auto& r : records) {
        w << r.gamma_src << r.m << r.method << r.mean_error << r.stderr << r.mean_alpha << r.mean_rho << r.n_runs;
        w.end_row();
    }
    write_manifest(o.out_path, "sweep", tc);
}

void cmd_theory(const CommonOptions& o) {
    const tlab::ToolConfig tc = load(o);
    std::ofstream f = open_out(o.out_path);
    tlab::CsvWriter w(f, {"gamma_src", "m", "mode", "error", "flag"});
    for (tlab::TheoryMode mode : tc.theory.modes) {
        for (const auto& r : tlab::theory_rows(tc.sweep, mode)) {
            w << r.gamma_src << r.m << r.mode << r.error << r.flag;
            w.end_row();
        }
    }
    write_manifest(o.out_path, "theory", tc);
}

void cmd_biasvar(const CommonOptions& o) {
    const tlab::ToolConfig tc = load(o);
    const auto records = tlab::bias_variance(tc.sweep);
    std::ofstream f = open_out(o.out_path);
    tlab::CsvWriter w(f, {"gamma_src", "m", "method", "bias_sq", "variance", "total", "residual"});
    for (const auto& r : records) {
        w << r.gamma_src << r.m << r.method << r.bias_sq << r.variance << r.total_error << r.decomposition_residual;
        w.end_row();
    }
    write_manifest(o.out_path, "biasvar", tc);
}

void cmd_tune_factor(const CommonOptions& o) {
    tlab::ToolConfig tc = load(o);
    tc.sweep.modes = {tlab::AssumedMode::DebiasTuned};
    tc.sweep.baselines = false;
    tc.sweep.compute_theory = false;
    const auto records = tlab::run_sweep(tc.sweep);
    std::ofstream f = open_out(o.out_path);
    tlab::CsvWriter w(f, {"gamma_src", "m", "mean_rho", "stderr_rho", "baseline_rho", "mean_error", "stderr", "n_runs"});
    for (const auto& r : records) {
        w << r.gamma_src << r.m << r.mean_rho << r.rho_stderr << tlab::rho_inf(r.gamma_src) << r.mean_error << r.stderr
          << r.n_runs;
        w.end_row();
    }
    write_manifest(o.out_path, "tune-factor", tc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tlab: linear transfer learning from overparameterized pretrained models"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonOptions opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON configuration file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opts.out_path, "output CSV path (manifest written to <out>.manifest.json)")
            ->required();
        sub->add_option("--seed", opts.seed, "override the master seed");
        sub->add_option("--runs", opts.runs, "override runs per point (and main runs for biasvar)");
        sub->add_option("--threads", opts.threads, "worker threads (default: config, then TLAB_THREADS, then all cores)");
    };

    CLI::App* sweep = app.add_subcommand("sweep", "empirical test errors over the gamma_src grid");
    CLI::App* theory = app.add_subcommand("theory", "limiting test errors over the gamma_src grid");
    CLI::App* biasvar = app.add_subcommand("biasvar", "bias-variance decomposition of the transfer estimator");
    CLI::App* tune = app.add_subcommand("tune-factor", "validation-selected debiasing factor per gamma_src");
    for (CLI::App* s : {sweep, theory, biasvar, tune}) add_common(s);

    CLI::App* check = app.add_subcommand("check", "evaluate the transfer and debiasing conditions");
    tlab::CheckInput ci;
    std::optional<int> n_tilde;
    std::optional<double> gamma_src;
    check->add_option("--d", ci.d, "dimension")->required();
    check->add_option("--n-tilde", n_tilde, "source sample size");
    check->add_option("--gamma-src", gamma_src, "source parameterization level d/n_tilde (n_tilde = floor(d/gamma))");
    check->add_option("--m", ci.m, "number of pretrained models")->required();
    check->add_option("--sigma-eta-sq", ci.sigma_eta_sq, "task-relation noise variance")->required();
    check->add_option("--sigma-xi-sq", ci.sigma_xi_sq, "source output noise variance")->required();
    check->add_option("--b", ci.b, "target parameter energy")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*sweep) cmd_sweep(opts);
        else if (*theory) cmd_theory(opts);
        else if (*biasvar) cmd_biasvar(opts);
        else if (*tune) cmd_tune_factor(opts);
        else if (*check) {
            if (n_tilde.has_value() == gamma_src.has_value()) {
                std::cerr << "check: give exactly one of --n-tilde and --gamma-src\n";
                return 2;
            }
            if (gamma_src && !(*gamma_src > 0.0)) {
                std::cerr << "check: --gamma-src must be > 0\n";
                return 2;
            }
            ci.n_tilde = n_tilde ? *n_tilde : tlab::n_tilde_for(*gamma_src, ci.d);
            std::cout << tlab::check_conditions(ci).text;
        }
    } catch (const tlab::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
