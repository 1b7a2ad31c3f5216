#pragma once

#include "tlab/linalg.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

using Rng = std::mt19937_64;

// Derives an independent generator from a master seed and an index tuple.
template <class... Ix>
Rng make_rng(std::uint64_t master, Ix... index) {
    std::vector<std::uint32_t> words{static_cast<std::uint32_t>(master),
                                     static_cast<std::uint32_t>(master >> 32)};
    for (std::uint64_t v : {static_cast<std::uint64_t>(index)...}) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

template <class Gen>
Vector standard_normal(Eigen::Index n, Gen& gen) {
    boost::random::normal_distribution<double> nd(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(gen);
    return v;
}

// Row-by-row fill so that the draw order does not depend on storage order.
template <class Gen>
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Gen& gen) {
    boost::random::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(gen);
    return m;
}

struct CovarianceSpec {
    enum class Kind { Identity, ExpDecay };
    Kind kind = Kind::Identity;
    double rate = 0.0;

    static CovarianceSpec identity() { return {}; }
    static CovarianceSpec exp_decay(double rate) { return {Kind::ExpDecay, rate}; }
    bool is_identity() const { return kind == Kind::Identity || rate == 0.0; }
};

inline void validate(const CovarianceSpec& spec) {
    if (spec.kind == CovarianceSpec::Kind::ExpDecay && !(spec.rate >= 0.0 && spec.rate < 1.0))
        throw std::invalid_argument("covariance: exp-decay rate must lie in [0, 1)");
}

inline Matrix build_covariance(const CovarianceSpec& spec, int d) {
    if (d < 1) throw std::invalid_argument("build_covariance: d must be >= 1");
    validate(spec);
    if (spec.kind == CovarianceSpec::Kind::Identity) return Matrix::Identity(d, d);
    Matrix s(d, d);
    for (int i = 0; i < d; ++i)
        for (int l = 0; l < d; ++l) s(i, l) = std::pow(spec.rate, std::abs(i - l));
    return s;
}

struct TaskRelationSpec {
    enum class Kind { Identity, Subspace, EnergySubspace, Circulant, Scaled };
    Kind kind = Kind::Identity;
    int r = 0;
    double kappa = 1.0;
    double factor = 1.0;
    std::shared_ptr<const TaskRelationSpec> base;

    static TaskRelationSpec identity() { return {}; }
    static TaskRelationSpec subspace(int r) { return {Kind::Subspace, r, 1.0, 1.0, nullptr}; }
    static TaskRelationSpec energy_subspace(int r) {
        return {Kind::EnergySubspace, r, 1.0, 1.0, nullptr};
    }
    static TaskRelationSpec circulant(double kappa) {
        return {Kind::Circulant, 0, kappa, 1.0, nullptr};
    }
    static TaskRelationSpec scaled(const TaskRelationSpec& base, double factor) {
        return {Kind::Scaled, 0, 1.0, factor, std::make_shared<const TaskRelationSpec>(base)};
    }

    // True when repeated builds give the same matrix (no random draw involved).
    bool is_deterministic() const {
        switch (kind) {
            case Kind::Subspace:
            case Kind::EnergySubspace: return false;
            case Kind::Scaled: return base->is_deterministic();
            default: return true;
        }
    }
};

inline void validate(const TaskRelationSpec& spec, int d) {
    using K = TaskRelationSpec::Kind;
    switch (spec.kind) {
        case K::Identity: break;
        case K::Subspace:
        case K::EnergySubspace:
            if (spec.r < 1 || spec.r >= d)
                throw std::invalid_argument("relation: subspace rank r must satisfy 1 <= r < d");
            break;
        case K::Circulant:
            if (!(spec.kappa >= 1.0))
                throw std::invalid_argument("relation: circulant kappa must be >= 1");
            if (d % 2 != 0) throw std::invalid_argument("relation: circulant requires even d");
            break;
        case K::Scaled:
            if (!spec.base) throw std::invalid_argument("relation: scaled relation without base");
            if (!(spec.factor > 0.0))
                throw std::invalid_argument("relation: scale factor must be > 0");
            validate(*spec.base, d);
            break;
    }
}

// Eigenvalues of the symmetric circulant relation, in DFT index order.
inline Vector circulant_spectrum(double kappa, int d) {
    if (d % 2 != 0 || d < 2) throw std::invalid_argument("circulant_spectrum: d must be even");
    if (!(kappa >= 1.0)) throw std::invalid_argument("circulant_spectrum: kappa must be >= 1");
    const int half = d / 2;
    const double top_sq = 2.0 * kappa * kappa / (1.0 + kappa * kappa);
    const double bottom_sq = 2.0 / (1.0 + kappa * kappa);
    Vector lambda(d);
    for (int k = 0; k <= half; ++k) {
        const double sq = top_sq - (top_sq - bottom_sq) * static_cast<double>(k) / half;
        lambda(k) = std::sqrt(sq);
    }
    lambda(half) = std::sqrt(bottom_sq);
    for (int k = 1; k < half; ++k) lambda(d - k) = lambda(k);
    return lambda;
}

inline Matrix circulant_relation(double kappa, int d) {
    const Vector lambda = circulant_spectrum(kappa, d);
    // Symmetric spectrum: first column is the inverse real DFT (cosines only).
    Vector c(d);
    for (int t = 0; t < d; ++t) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k)
            acc += lambda(k) * std::cos(2.0 * std::numbers::pi * k * t / d);
        c(t) = acc / d;
    }
    Matrix h(d, d);
    for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l) h(j, l) = c(((j - l) % d + d) % d);
    return h;
}

template <class Gen>
Matrix random_projection(int d, int r, Gen& gen) {
    const Matrix g = standard_normal(d, r, gen);
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ() * Matrix::Identity(d, r);
    return q * q.transpose();
}

template <class Gen>
Matrix build_relation(const TaskRelationSpec& spec, int d, Gen& gen) {
    validate(spec, d);
    using K = TaskRelationSpec::Kind;
    switch (spec.kind) {
        case K::Identity: return Matrix::Identity(d, d);
        case K::Subspace: return random_projection(d, spec.r, gen);
        case K::EnergySubspace:
            return std::sqrt(static_cast<double>(d) / spec.r) * random_projection(d, spec.r, gen);
        case K::Circulant: return circulant_relation(spec.kappa, d);
        case K::Scaled: return spec.factor * build_relation(*spec.base, d, gen);
    }
    throw std::logic_error("build_relation: unknown kind");
}

struct TargetTaskParams {
    int d = 128;
    int n = 32;
    double sigma_eps_sq = 0.1;
    double b = 1.0;
    CovarianceSpec cov;
};

struct SourceTaskParams {
    int n_tilde = 64;
    double sigma_xi_sq = 0.5;
    double sigma_eta_sq = 0.5;
    TaskRelationSpec relation;
    CovarianceSpec cov;
};

struct Dataset {
    Matrix inputs;   // count x d
    Vector outputs;  // count
};

template <class Gen>
Vector sample_beta(double b, int d, Gen& gen) {
    if (!(b > 0.0)) throw std::invalid_argument("sample_beta: b must be > 0");
    return std::sqrt(b / d) * standard_normal(d, gen);
}

template <class Gen>
Vector make_source_theta(const Vector& beta, const Matrix& h, double sigma_eta_sq, int d,
                         Gen& gen) {
    if (h.rows() != d || h.cols() != beta.size())
        throw std::invalid_argument("make_source_theta: dimension mismatch");
    if (sigma_eta_sq < 0.0) throw std::invalid_argument("make_source_theta: negative variance");
    return h * beta + std::sqrt(sigma_eta_sq / d) * standard_normal(d, gen);
}

// Draws rows x ~ N(0, Sigma) as x = Sigma^{1/2} g; caches the square root.
class InputSampler {
public:
    InputSampler(const CovarianceSpec& spec, int d) : d_(d), identity_(spec.is_identity()) {
        validate(spec);
        if (!identity_) root_ = sym_psd_sqrt(build_covariance(spec, d));
    }

    int dim() const { return d_; }
    bool is_identity() const { return identity_; }

    template <class Gen>
    Matrix draw(int count, Gen& gen) const {
        Matrix g = standard_normal(count, d_, gen);
        if (identity_) return g;
        return g * root_;  // root is symmetric
    }

private:
    int d_;
    bool identity_;
    Matrix root_;
};

template <class Gen>
Dataset gen_dataset(const Vector& param, const InputSampler& sampler, double noise_var, int count,
                    Gen& gen) {
    if (count < 1) throw std::invalid_argument("gen_dataset: count must be >= 1");
    if (noise_var < 0.0) throw std::invalid_argument("gen_dataset: negative noise variance");
    if (param.size() != sampler.dim())
        throw std::invalid_argument("gen_dataset: parameter dimension mismatch");
    Dataset ds;
    ds.inputs = sampler.draw(count, gen);
    ds.outputs = ds.inputs * param + std::sqrt(noise_var) * standard_normal(count, gen);
    return ds;
}

template <class Gen>
Dataset gen_dataset(const Vector& param, const CovarianceSpec& cov, double noise_var, int count,
                    Gen& gen) {
    return gen_dataset(param, InputSampler(cov, static_cast<int>(param.size())), noise_var, count,
                       gen);
}

// Smallest and largest eigenvalue of sum_j H_j^T H_j; used for the full-rank requirement.
inline std::pair<double, double> relation_gram_extremes(const std::vector<Matrix>& relations) {
    if (relations.empty()) throw std::invalid_argument("relation_gram: empty relation list");
    const Eigen::Index d = relations.front().cols();
    Matrix gram = Matrix::Zero(d, d);
    for (const auto& h : relations) gram.noalias() += h.transpose() * h;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
    return {es.eigenvalues()(0), es.eigenvalues()(d - 1)};
}

inline bool relations_full_rank(const std::vector<Matrix>& relations,
                                double rel_tol = tolerances().relation_rank) {
    const auto [lo, hi] = relation_gram_extremes(relations);
    return hi > 0.0 && lo > rel_tol * hi;
}

}  // namespace tlab
