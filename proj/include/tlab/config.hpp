#pragma once

// JSON configuration loader for the command-line tool. Every field is checked
// for type and range, unknown keys are rejected, and all problems are reported
// together with their dotted path (e.g. "relation.r: must satisfy 1 <= r < d").

#include "tlab/experiments.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& ps) {
        std::string s = "invalid configuration:";
        for (const auto& p : ps) s += "\n  " + p;
        return s;
    }
    std::vector<std::string> problems_;
};

enum class TheoryMode { Simple, Debias, General };

inline const char* to_string(TheoryMode m) {
    switch (m) {
        case TheoryMode::Simple: return "simple";
        case TheoryMode::Debias: return "debias";
        case TheoryMode::General: return "general";
    }
    return "?";
}

struct TheoryConfig {
    std::vector<TheoryMode> modes{TheoryMode::Simple};
};

struct ToolConfig {
    SweepConfig sweep;
    TheoryConfig theory;
    bool threads_given = false;
    Json echo;  // the parsed document, for the manifest
};

namespace detail {

class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    void error(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

    // Rejects keys outside `allowed` in object `j` at `path`.
    void only_keys(const Json& j, const std::string& path, const std::set<std::string>& allowed) {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!allowed.count(it.key())) error(join(path, it.key()), "unknown key");
    }

    bool is_object(const Json& j, const std::string& path) {
        if (j.is_object()) return true;
        error(path, "expected an object");
        return false;
    }

    template <class T>
    void read(const Json& obj, const std::string& path, const char* key, T& out) {
        if (!obj.contains(key)) return;
        const Json& v = obj.at(key);
        const std::string p = join(path, key);
        convert(v, p, out);
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

    void convert(const Json& v, const std::string& p, double& out) {
        if (!v.is_number()) return error(p, "expected a number, got " + std::string(v.type_name()));
        out = v.get<double>();
    }
    void convert(const Json& v, const std::string& p, int& out) {
        if (!v.is_number_integer()) return error(p, "expected an integer, got " + std::string(v.type_name()));
        const auto x = v.get<long long>();
        if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
            return error(p, "integer out of range");
        out = static_cast<int>(x);
    }
    void convert(const Json& v, const std::string& p, std::uint64_t& out) {
        if (!v.is_number_unsigned()) return error(p, "expected a non-negative integer");
        out = v.get<std::uint64_t>();
    }
    void convert(const Json& v, const std::string& p, bool& out) {
        if (!v.is_boolean()) return error(p, "expected true or false");
        out = v.get<bool>();
    }
    void convert(const Json& v, const std::string& p, std::string& out) {
        if (!v.is_string()) return error(p, "expected a string");
        out = v.get<std::string>();
    }
    template <class T>
    void convert(const Json& v, const std::string& p, std::vector<T>& out) {
        if (!v.is_array()) return error(p, "expected an array");
        std::vector<T> tmp(v.size());
        const std::size_t before = errors_.size();
        for (std::size_t i = 0; i < v.size(); ++i) convert(v[i], p + "[" + std::to_string(i) + "]", tmp[i]);
        if (errors_.size() == before) out = std::move(tmp);
    }

private:
    std::vector<std::string>& errors_;
};

inline std::optional<CovarianceSpec> parse_covariance(Reader& r, const Json& j, const std::string& path) {
    if (j.is_string()) {
        if (j == "identity") return CovarianceSpec::identity();
        r.error(path, "unknown covariance \"" + j.get<std::string>() + "\" (identity | exp_decay)");
        return std::nullopt;
    }
    if (!r.is_object(j, path)) return std::nullopt;
    r.only_keys(j, path, {"kind", "rate"});
    std::string kind = "identity";
    double rate = 0.0;
    r.read(j, path, "kind", kind);
    r.read(j, path, "rate", rate);
    if (kind == "identity") return CovarianceSpec::identity();
    if (kind == "exp_decay") {
        if (!j.contains("rate")) r.error(Reader::join(path, "rate"), "required for exp_decay");
        if (!(rate >= 0.0 && rate < 1.0)) r.error(Reader::join(path, "rate"), "must lie in [0, 1)");
        return CovarianceSpec::exp_decay(rate);
    }
    r.error(Reader::join(path, "kind"), "unknown covariance kind \"" + kind + "\" (identity | exp_decay)");
    return std::nullopt;
}

inline std::optional<TaskRelationSpec> parse_relation(Reader& r, const Json& j, const std::string& path, int d) {
    if (j.is_string()) {
        if (j == "identity") return TaskRelationSpec::identity();
        r.error(path, "a bare string relation must be \"identity\"");
        return std::nullopt;
    }
    if (!r.is_object(j, path)) return std::nullopt;
    r.only_keys(j, path, {"kind", "r", "kappa", "factor", "base"});
    std::string kind = "identity";
    int rank = 0;
    double kappa = 1.0, factor = 1.0;
    r.read(j, path, "kind", kind);
    r.read(j, path, "r", rank);
    r.read(j, path, "kappa", kappa);
    r.read(j, path, "factor", factor);
    const std::string rp = Reader::join(path, "r");
    if (kind == "identity") return TaskRelationSpec::identity();
    if (kind == "subspace" || kind == "energy_subspace") {
        if (!j.contains("r")) r.error(rp, "required for " + kind);
        else if (rank < 1 || rank >= d) r.error(rp, "must satisfy 1 <= r < d (d = " + std::to_string(d) + ")");
        return kind == "subspace" ? TaskRelationSpec::subspace(rank) : TaskRelationSpec::energy_subspace(rank);
    }
    if (kind == "circulant") {
        if (!j.contains("kappa")) r.error(Reader::join(path, "kappa"), "required for circulant");
        else if (!(kappa >= 1.0)) r.error(Reader::join(path, "kappa"), "must be >= 1");
        if (d % 2 != 0) r.error(path, "circulant relations need an even d");
        return TaskRelationSpec::circulant(kappa);
    }
    if (kind == "scaled") {
        if (!j.contains("base")) {
            r.error(Reader::join(path, "base"), "required for scaled");
            return std::nullopt;
        }
        if (!(factor > 0.0)) r.error(Reader::join(path, "factor"), "must be > 0");
        auto base = parse_relation(r, j.at("base"), Reader::join(path, "base"), d);
        if (!base) return std::nullopt;
        return TaskRelationSpec::scaled(*base, factor);
    }
    r.error(Reader::join(path, "kind"),
            "unknown relation kind \"" + kind + "\" (identity | subspace | energy_subspace | circulant | scaled)");
    return std::nullopt;
}

inline std::optional<AssumedMode> parse_mode(const std::string& s) {
    if (s == "identity") return AssumedMode::Identity;
    if (s == "true_h") return AssumedMode::TrueH;
    if (s == "debias_known") return AssumedMode::DebiasKnown;
    if (s == "debias_tuned") return AssumedMode::DebiasTuned;
    if (s == "scaled_true_h") return AssumedMode::ScaledTrueH;
    return std::nullopt;
}

inline std::optional<std::vector<double>> parse_grid(Reader& r, const Json& j, const std::string& path) {
    if (j.is_array()) {
        std::vector<double> g;
        r.convert(j, path, g);
        if (g.empty()) r.error(path, "must be nonempty");
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(g[i] > 0.0)) r.error(path + "[" + std::to_string(i) + "]", "must be > 0");
            if (i > 0 && !(g[i] > g[i - 1])) r.error(path, "must be strictly increasing");
        }
        return g;
    }
    if (!r.is_object(j, path)) return std::nullopt;
    r.only_keys(j, path, {"spacing", "lo", "hi", "count"});
    std::string spacing = "log";
    double lo = 0.0, hi = 0.0;
    int count = 0;
    r.read(j, path, "spacing", spacing);
    r.read(j, path, "lo", lo);
    r.read(j, path, "hi", hi);
    r.read(j, path, "count", count);
    for (const char* k : {"lo", "hi", "count"})
        if (!j.contains(k)) r.error(Reader::join(path, k), "required");
    if (!(lo > 0.0) || !(hi > lo)) r.error(path, "needs 0 < lo < hi");
    if (count < 2) r.error(Reader::join(path, "count"), "must be >= 2");
    if (!(lo > 0.0) || !(hi > lo) || count < 2) return std::nullopt;
    if (spacing == "log") return log_grid(lo, hi, count);
    if (spacing == "linear") return linear_grid(lo, hi, count);
    r.error(Reader::join(path, "spacing"), "must be \"log\" or \"linear\"");
    return std::nullopt;
}

}  // namespace detail

// Parses and validates a configuration document. Throws ConfigError listing
// every problem found.
inline ToolConfig parse_config(const Json& doc) {
    std::vector<std::string> errs;
    detail::Reader r(errs);
    ToolConfig out;
    out.echo = doc;
    if (!doc.is_object()) throw ConfigError({"<root>: expected a JSON object"});
    r.only_keys(doc, "", {"d", "gamma_tgt", "gamma_src_grid", "m_list", "noise", "b", "relation", "modes",
                          "cov_x", "cov_z", "runs_per_point", "val_size", "test_size", "alpha_grid", "rho_grid",
                          "seed", "threads", "baselines", "theory_overlay", "biasvar", "theory"});
    SweepConfig& c = out.sweep;
    r.read(doc, "", "d", c.d);
    if (c.d < 2) r.error("d", "must be >= 2");
    r.read(doc, "", "gamma_tgt", c.gamma_tgt);
    if (!(c.gamma_tgt > 0.0)) r.error("gamma_tgt", "must be > 0");
    if (doc.contains("gamma_src_grid")) {
        if (auto g = detail::parse_grid(r, doc.at("gamma_src_grid"), "gamma_src_grid")) c.gamma_src_grid = *g;
    }
    r.read(doc, "", "m_list", c.m_list);
    if (c.m_list.empty()) r.error("m_list", "must be nonempty");
    for (std::size_t i = 0; i < c.m_list.size(); ++i)
        if (c.m_list[i] < 1) r.error("m_list[" + std::to_string(i) + "]", "must be >= 1");
    if (doc.contains("noise")) {
        const Json& n = doc.at("noise");
        if (r.is_object(n, "noise")) {
            r.only_keys(n, "noise", {"sigma_eta_sq", "sigma_xi_sq", "sigma_eps_sq"});
            r.read(n, "noise", "sigma_eta_sq", c.sigma_eta_sq);
            r.read(n, "noise", "sigma_xi_sq", c.sigma_xi_sq);
            r.read(n, "noise", "sigma_eps_sq", c.sigma_eps_sq);
        }
    }
    if (c.sigma_eta_sq < 0.0) r.error("noise.sigma_eta_sq", "must be >= 0");
    if (c.sigma_xi_sq < 0.0) r.error("noise.sigma_xi_sq", "must be >= 0");
    if (c.sigma_eps_sq < 0.0) r.error("noise.sigma_eps_sq", "must be >= 0");
    r.read(doc, "", "b", c.b);
    if (!(c.b > 0.0)) r.error("b", "must be > 0");
    if (doc.contains("relation")) {
        if (auto rel = detail::parse_relation(r, doc.at("relation"), "relation", c.d)) c.relation = *rel;
    }
    if (doc.contains("modes")) {
        std::vector<std::string> names;
        r.read(doc, "", "modes", names);
        if (doc.at("modes").is_array() && doc.at("modes").empty()) r.error("modes", "must be nonempty");
        std::vector<AssumedMode> modes;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (auto m = detail::parse_mode(names[i])) modes.push_back(*m);
            else
                r.error("modes[" + std::to_string(i) + "]",
                        "unknown mode \"" + names[i] +
                            "\" (identity | true_h | debias_known | debias_tuned | scaled_true_h)");
        }
        if (!modes.empty()) c.modes = modes;
    }
    if (doc.contains("cov_x")) {
        if (auto s = detail::parse_covariance(r, doc.at("cov_x"), "cov_x")) c.cov_x = *s;
    }
    if (doc.contains("cov_z")) {
        if (auto s = detail::parse_covariance(r, doc.at("cov_z"), "cov_z")) c.cov_z = *s;
    }
    r.read(doc, "", "runs_per_point", c.runs_per_point);
    if (c.runs_per_point < 1) r.error("runs_per_point", "must be >= 1");
    r.read(doc, "", "val_size", c.val_size);
    if (c.val_size < 1) r.error("val_size", "must be >= 1");
    r.read(doc, "", "test_size", c.test_size);
    if (c.test_size < 1) r.error("test_size", "must be >= 1");
    if (doc.contains("alpha_grid")) {
        if (auto g = detail::parse_grid(r, doc.at("alpha_grid"), "alpha_grid")) c.alpha_grid = *g;
    }
    if (doc.contains("rho_grid")) {
        if (auto g = detail::parse_grid(r, doc.at("rho_grid"), "rho_grid")) c.rho_grid = *g;
    }
    r.read(doc, "", "seed", c.master_seed);
    if (doc.contains("threads")) {
        r.read(doc, "", "threads", c.threads);
        if (c.threads < 1) r.error("threads", "must be >= 1");
        out.threads_given = true;
    }
    r.read(doc, "", "baselines", c.baselines);
    r.read(doc, "", "theory_overlay", c.compute_theory);
    if (doc.contains("biasvar")) {
        const Json& b = doc.at("biasvar");
        if (r.is_object(b, "biasvar")) {
            r.only_keys(b, "biasvar", {"main_runs", "sub_runs", "alpha"});
            r.read(b, "biasvar", "main_runs", c.main_runs);
            r.read(b, "biasvar", "sub_runs", c.sub_runs);
            std::string policy = "tuned";
            r.read(b, "biasvar", "alpha", policy);
            if (policy == "tuned") c.biasvar_alpha = AlphaPolicy::Tuned;
            else if (policy == "formula") c.biasvar_alpha = AlphaPolicy::Formula;
            else r.error("biasvar.alpha", "must be \"tuned\" or \"formula\"");
        }
    }
    if (c.main_runs < 1) r.error("biasvar.main_runs", "must be >= 1");
    if (c.sub_runs < 2) r.error("biasvar.sub_runs", "must be >= 2");
    if (doc.contains("theory")) {
        const Json& t = doc.at("theory");
        if (r.is_object(t, "theory")) {
            r.only_keys(t, "theory", {"modes"});
            std::vector<std::string> names;
            r.read(t, "theory", "modes", names);
            std::vector<TheoryMode> modes;
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (names[i] == "simple") modes.push_back(TheoryMode::Simple);
                else if (names[i] == "debias") modes.push_back(TheoryMode::Debias);
                else if (names[i] == "general") modes.push_back(TheoryMode::General);
                else
                    r.error("theory.modes[" + std::to_string(i) + "]",
                            "unknown theory mode \"" + names[i] + "\" (simple | debias | general)");
            }
            if (t.contains("modes") && t.at("modes").is_array() && t.at("modes").empty())
                r.error("theory.modes", "must be nonempty");
            if (!modes.empty()) out.theory.modes = modes;
        }
    }
    if (!errs.empty()) throw ConfigError(errs);
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw ConfigError({e.what()});
    }
    return out;
}

inline ToolConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({path + ": cannot open file"});
    Json doc;
    try {
        doc = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        throw ConfigError({path + ": " + e.what()});
    }
    return parse_config(doc);
}

// The effective configuration after defaults and overrides, for the manifest.
inline Json effective_json(const SweepConfig& c) {
    Json j;
    j["d"] = c.d;
    j["gamma_tgt"] = c.gamma_tgt;
    j["gamma_src_grid"] = c.gamma_src_grid;
    j["m_list"] = c.m_list;
    j["noise"] = {{"sigma_eta_sq", c.sigma_eta_sq}, {"sigma_xi_sq", c.sigma_xi_sq}, {"sigma_eps_sq", c.sigma_eps_sq}};
    j["b"] = c.b;
    std::vector<std::string> modes;
    for (AssumedMode m : c.modes) modes.emplace_back(method_label(m));
    j["methods"] = modes;
    j["runs_per_point"] = c.runs_per_point;
    j["val_size"] = c.val_size;
    j["test_size"] = c.test_size;
    j["alpha_grid"] = c.alpha_grid;
    j["seed"] = c.master_seed;
    j["threads"] = c.threads;
    j["biasvar"] = {{"main_runs", c.main_runs},
                    {"sub_runs", c.sub_runs},
                    {"alpha", c.biasvar_alpha == AlphaPolicy::Tuned ? "tuned" : "formula"}};
    return j;
}

}  // namespace tlab
