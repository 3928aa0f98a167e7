#pragma once

// Annealed quasi-Newton fit of the linear latent factor objective.
//
// Each annealing stage replaces Sigma by Sigma_eps = (1 - eps^2) Sigma + eps^2 I,
// runs quasi-Newton steps in U coordinates with Armijo backtracking until the
// relative objective change drops below rel_tol, and warm-starts the next stage.
//
// Line search uses the Armijo sufficient-decrease condition only. Steps are
// capped at alpha = 1 and the direction is rebuilt every iteration, so no
// curvature condition is enforced.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/moments.hpp"
#include "nglf/objective.hpp"
#include "nglf/random.hpp"

namespace nglf {

/// How to read the second argument of the N(0, 1/sqrt(p)) initialization.
enum class InitScale {
    stddev,   // entries have standard deviation 1/sqrt(p)
    variance  // entries have variance 1/sqrt(p), i.e. standard deviation p^(-1/4)
};

inline std::vector<double> default_anneal_schedule() {
    return {0.6, 0.6 * 0.6, 0.6 * 0.6 * 0.6, 0.6 * 0.6 * 0.6 * 0.6, 0.6 * 0.6 * 0.6 * 0.6 * 0.6,
            0.0};
}

struct SolverConfig {
    int m = 1;
    std::vector<double> anneal_schedule = default_anneal_schedule();
    int max_iters_per_stage = 10000;
    double rel_tol = 1e-8;
    double armijo_c1 = 1e-4;
    double ls_shrink = 0.5;
    double r_clip = default_r_clip;
    double min_alpha = 1e-10;
    std::uint64_t seed = 0;
    InitScale init_scale = InitScale::stddev;

    void validate() const {
        if (m < 1) throw ValidationError("m must be >= 1");
        if (anneal_schedule.empty() || anneal_schedule.back() != 0.0)
            throw ValidationError("annealing schedule must end in 0");
        for (double e : anneal_schedule)
            if (!(e >= 0.0 && e <= 1.0))
                throw ValidationError("annealing values must lie in [0, 1]");
        if (max_iters_per_stage < 1) throw ValidationError("max_iters_per_stage must be >= 1");
        if (!(rel_tol > 0.0)) throw ValidationError("rel_tol must be positive");
        if (!(armijo_c1 > 0.0 && armijo_c1 < 1.0))
            throw ValidationError("armijo_c1 must lie in (0, 1)");
        if (!(ls_shrink > 0.0 && ls_shrink < 1.0))
            throw ValidationError("ls_shrink must lie in (0, 1)");
        if (!(r_clip > 0.0 && r_clip < 1.0)) throw ValidationError("r_clip must lie in (0, 1)");
        if (!(min_alpha > 0.0 && min_alpha < 1.0))
            throw ValidationError("min_alpha must lie in (0, 1)");
    }
};

/// i.i.d. zero-mean Gaussian m x p weights, deterministic in the seed.
inline Eigen::MatrixXd init_weights(int p, int m, std::uint64_t seed,
                                    InitScale scale = InitScale::stddev) {
    if (m < 1 || p < 1) throw ValidationError("init_weights needs p >= 1 and m >= 1");
    const double sd = scale == InitScale::stddev ? 1.0 / std::sqrt(static_cast<double>(p))
                                                 : std::pow(static_cast<double>(p), -0.25);
    NormalStream rng(seed);
    return rng.normal_matrix(m, p, sd);
}

/// W_j = U_j / sqrt(1 - U_j Sigma_eps U_j^T). Returns nullopt if any radicand is not positive.
template <SecondMomentSource S>
std::optional<Eigen::MatrixXd> recover_weights(const Eigen::MatrixXd& u, const S& source,
                                               double eps) {
    const AnnealedSource<S> annealed(source, eps);
    const Eigen::MatrixXd us = annealed.cross(u);
    Eigen::MatrixXd w(u.rows(), u.cols());
    for (Eigen::Index j = 0; j < u.rows(); ++j) {
        const double rad = 1.0 - us.row(j).dot(u.row(j));
        if (!(rad > 0.0) || !std::isfinite(rad)) return std::nullopt;
        w.row(j) = u.row(j) / std::sqrt(rad);
    }
    return w;
}

struct SolverState {
    Eigen::MatrixXd w;
    MomentSet ms;
    double objective = 0.0;
};

template <SecondMomentSource S>
SolverState make_state(Eigen::MatrixXd w, const S& source, double eps, double r_clip) {
    SolverState st;
    st.ms = compute_moments(w, source, eps, r_clip);
    st.objective = objective(st.ms);
    st.w = std::move(w);
    return st;
}

struct LineSearchResult {
    bool accepted = false;
    double alpha = 0.0;
    int trials = 0;
    SolverState state;
};

/// Backtracking from alpha = 1 along U <- U - alpha * delta_u.
///
/// `grad` is the R-coordinate gradient at `st`; the directional derivative in
/// U coordinates is -<grad, delta_u Sigma_eps>. A trial is rejected when the
/// weight recovery radicand is not positive, the objective leaves its log
/// domain, or sufficient decrease fails.
///
/// Every trial is evaluated from products precomputed once per call
/// (U Sigma, delta Sigma and their m x m Grams), so only one O(m n p)
/// product is needed regardless of the number of trials.
template <SecondMomentSource S>
LineSearchResult line_search(const SolverState& st, const Eigen::MatrixXd& grad,
                             const Eigen::MatrixXd& delta_u, const S& source, double eps,
                             const SolverConfig& cfg) {
    LineSearchResult res;
    if (delta_u.isZero(0.0)) {
        res.accepted = true;
        res.alpha = 1.0;
        res.state = st;
        return res;
    }
    if (!delta_u.allFinite()) return res;

    const AnnealedSource<S> annealed(source, eps);
    const Eigen::MatrixXd d_sigma = annealed.cross(delta_u);
    const double slope = -(grad.array() * d_sigma.array()).sum();
    if (!(slope < 0.0)) return res;

    const Eigen::VectorXd inv_sd = st.ms.z2.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd u = inv_sd.asDiagonal() * st.w;
    const Eigen::MatrixXd u_sigma = inv_sd.asDiagonal() * st.ms.w_sigma;
    const Eigen::MatrixXd u_gram = inv_sd.asDiagonal() * st.ms.gram * inv_sd.asDiagonal();
    const Eigen::MatrixXd ud = u_sigma * delta_u.transpose();
    const Eigen::MatrixXd dd = d_sigma * delta_u.transpose();
    const Eigen::MatrixXd ud_sym = ud + ud.transpose();

    for (double alpha = 1.0; alpha >= cfg.min_alpha; alpha *= cfg.ls_shrink) {
        ++res.trials;
        Eigen::MatrixXd g_u = u_gram - alpha * ud_sym + (alpha * alpha) * dd;
        g_u = 0.5 * (g_u + g_u.transpose()).eval();
        const Eigen::ArrayXd rad = 1.0 - g_u.diagonal().array();
        if (!(rad > 0.0).all() || !rad.allFinite()) continue;
        const Eigen::VectorXd scale = rad.sqrt().inverse().matrix();

        Eigen::MatrixXd w_new = scale.asDiagonal() * (u - alpha * delta_u);
        Eigen::MatrixXd ws_new = scale.asDiagonal() * (u_sigma - alpha * d_sigma);
        Eigen::MatrixXd gram_new = scale.asDiagonal() * g_u * scale.asDiagonal();

        SolverState trial;
        try {
            trial.ms = moments_from_products(std::move(ws_new), std::move(gram_new), cfg.r_clip);
            trial.objective = objective(trial.ms);
        } catch (const NumericError&) {
            continue;
        }
        if (trial.objective <= st.objective + cfg.armijo_c1 * alpha * slope) {
            trial.w = std::move(w_new);
            res.accepted = true;
            res.alpha = alpha;
            res.state = std::move(trial);
            return res;
        }
    }
    return res;
}

struct TraceEntry {
    int stage = 0;
    double eps = 0.0;
    int iter = 0;          // 0 is the stage's starting point
    double objective = 0.0;
    double alpha = 0.0;    // accepted step; 0 at iter 0
    bool fallback = false; // step taken along the raw U-gradient
};

struct StageSummary {
    double eps = 0.0;
    int iterations = 0;
    bool converged = false;
    bool stalled = false;
    double objective = 0.0;
};

struct FitTrace {
    std::vector<TraceEntry> entries;
    std::vector<StageSummary> stages;

    bool any_stalled() const {
        for (const auto& s : stages)
            if (s.stalled) return true;
        return false;
    }
};

struct FactorModel {
    Eigen::MatrixXd w;       // m x p, latent noise variance 1
    MomentSet moments;       // at eps = 0
    Eigen::VectorXd means;   // training column means (original units)
    Eigen::VectorXd scales;  // training column 1/n standard deviations
    SolverConfig config;
    double objective = 0.0;

    Eigen::Index m() const { return w.rows(); }
    Eigen::Index p() const { return w.cols(); }
};

/// Run one annealing stage in place. Returns the stage summary.
template <SecondMomentSource S>
StageSummary run_stage(SolverState& st, const S& source, double eps, int stage_index,
                       const SolverConfig& cfg, FitTrace& trace) {
    StageSummary summary;
    summary.eps = eps;
    trace.entries.push_back({stage_index, eps, 0, st.objective, 0.0, false});

    const AnnealedSource<S> annealed(source, eps);
    for (int it = 1; it <= cfg.max_iters_per_stage; ++it) {
        const Eigen::MatrixXd g = gradient(st.ms, st.w);
        bool fallback = false;
        LineSearchResult ls = line_search(st, g, qn_direction(g, st.ms, st.w), source, eps, cfg);
        if (!ls.accepted) {
            fallback = true;
            ls = line_search(st, g, annealed.cross(g), source, eps, cfg);
        }
        if (!ls.accepted) {
            summary.stalled = true;
            break;
        }
        const double change =
            std::abs(st.objective - ls.state.objective) / std::max(std::abs(st.objective), 1.0);
        st = std::move(ls.state);
        summary.iterations = it;
        trace.entries.push_back({stage_index, eps, it, st.objective, ls.alpha, fallback});
        if (change < cfg.rel_tol) {
            summary.converged = true;
            break;
        }
    }
    summary.objective = st.objective;
    return summary;
}

/// Fit from any second-moment source, starting from `w0`.
template <SecondMomentSource S>
FactorModel fit_from(const S& source, const SolverConfig& cfg, Eigen::MatrixXd w0,
                     FitTrace* trace_out = nullptr) {
    cfg.validate();
    if (w0.rows() != cfg.m || w0.cols() != source.p())
        throw ValidationError("initial weights have the wrong shape");

    FitTrace trace;
    SolverState st;
    st.w = std::move(w0);
    for (std::size_t s = 0; s < cfg.anneal_schedule.size(); ++s) {
        const double eps = cfg.anneal_schedule[s];
        st = make_state(std::move(st.w), source, eps, cfg.r_clip);
        trace.stages.push_back(run_stage(st, source, eps, static_cast<int>(s), cfg, trace));
    }

    FactorModel model;
    model.config = cfg;
    model.moments = std::move(st.ms);
    model.objective = st.objective;
    model.w = std::move(st.w);
    model.means = Eigen::VectorXd::Zero(source.p());
    model.scales = Eigen::VectorXd::Ones(source.p());
    if (trace_out) *trace_out = std::move(trace);
    return model;
}

template <SecondMomentSource S>
FactorModel fit(const S& source, const SolverConfig& cfg, FitTrace* trace_out = nullptr) {
    cfg.validate();
    return fit_from(source, cfg,
                    init_weights(static_cast<int>(source.p()), cfg.m, cfg.seed, cfg.init_scale),
                    trace_out);
}

/// Fit standardized data; the model records the training means and scales.
inline FactorModel fit(const StandardizedData& data, const SolverConfig& cfg,
                       FitTrace* trace_out = nullptr) {
    if (data.n() < 2) throw ValidationError("fit needs at least 2 samples");
    FactorModel model = fit(DataSource(data), cfg, trace_out);
    model.means = data.means;
    model.scales = data.scales;
    return model;
}

}  // namespace nglf
