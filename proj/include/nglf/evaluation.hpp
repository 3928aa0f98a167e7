#pragma once

// Structure-recovery scoring and information diagnostics for fitted models.

#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/model_synth.hpp"
#include "nglf/moments.hpp"
#include "nglf/objective.hpp"
#include "nglf/solver.hpp"

namespace nglf {

struct ClusterAssignment {
    Labels labels;
    std::vector<double> strengths;  // winning |R_ji|
};

/// label_i = argmax_j |R_ji|, ties to the lowest factor index.
///
/// Correlations are used instead of raw weights because R does not change
/// when a latent factor is rescaled.
inline ClusterAssignment cluster_assignment(const Eigen::MatrixXd& R) {
    ClusterAssignment out;
    out.labels.resize(static_cast<std::size_t>(R.cols()));
    out.strengths.resize(static_cast<std::size_t>(R.cols()));
    for (Eigen::Index i = 0; i < R.cols(); ++i) {
        int best = 0;
        double best_abs = -1.0;
        for (Eigen::Index j = 0; j < R.rows(); ++j) {
            const double a = std::abs(R(j, i));
            if (a > best_abs) {
                best_abs = a;
                best = static_cast<int>(j);
            }
        }
        out.labels[static_cast<std::size_t>(i)] = best;
        out.strengths[static_cast<std::size_t>(i)] = std::max(best_abs, 0.0);
    }
    return out;
}

inline ClusterAssignment cluster_assignment(const FactorModel& model) {
    return cluster_assignment(model.moments.R);
}

/// Normalized mutual information I(a; b) / sqrt(H(a) H(b)) over the empirical
/// joint label distribution.
///
/// Zero-entropy conventions: two constant labelings score 1, a constant
/// against a non-constant labeling scores 0.
inline double nmi(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size())
        throw ValidationError("nmi needs equal-length labelings (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    if (a.empty()) throw ValidationError("nmi needs non-empty labelings");
    const double n = static_cast<double>(a.size());

    std::map<int, double> ca, cb;
    std::map<std::pair<int, int>, double> cab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1.0;
        cb[b[i]] += 1.0;
        cab[{a[i], b[i]}] += 1.0;
    }
    auto entropy = [n](const auto& counts) {
        double h = 0.0;
        for (const auto& [_, c] : counts) h -= (c / n) * std::log(c / n);
        return h;
    };
    const double ha = ca.size() > 1 ? entropy(ca) : 0.0;
    const double hb = cb.size() > 1 ? entropy(cb) : 0.0;
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;

    double mi = 0.0;
    for (const auto& [key, c] : cab)
        mi += (c / n) * std::log(c * n / (ca[key.first] * cb[key.second]));
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

inline double nmi(const Labels& a, const Labels& b) {
    return nmi(std::span<const int>(a), std::span<const int>(b));
}

inline double nmi(const ClusterAssignment& a, const Labels& b) { return nmi(a.labels, b); }

/// Lower bound TC(X) >= sum_i I(X_i; Z) - sum_j I(Z_j; X), with
/// I(Z_j; X) = 1/2 log <Z_j^2> (unit latent noise) and I(X_i; Z) estimated
/// from the residual variance of the closed-form conditional mean.
///
/// This is a diagnostic: between iterations the surrogate for I(X_i; Z) is
/// not guaranteed to keep it a valid bound.
inline double tc_lower_bound(const MomentSet& ms) {
    return -objective(ms);
}

/// I(Z_j; X) per factor, in nats.
inline Eigen::VectorXd latent_information(const MomentSet& ms) {
    return 0.5 * ms.z2.array().log();
}

/// TC(X) = sum_i 1/2 log Sigma_ii - 1/2 log det Sigma for a Gaussian.
inline double gaussian_total_correlation(const Eigen::MatrixXd& sigma) {
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw NotPositiveDefiniteError("covariance is not PD");
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return 0.5 * sigma.diagonal().array().log().sum() - 0.5 * logdet;
}

/// Exact Var(X_i | Z) for Z = W X + N(0, I), by inverting the latent covariance.
/// Test-only oracle; O(p^2 m) with an explicit covariance.
inline Eigen::VectorXd exact_conditional_variance(const Eigen::MatrixXd& w,
                                                  const Eigen::MatrixXd& sigma) {
    if (w.cols() != sigma.rows()) throw ValidationError("shape mismatch in conditional variance");
    const Eigen::MatrixXd cross = sigma * w.transpose();  // Cov(X, Z), p x m
    Eigen::MatrixXd cov_z = w * cross;
    cov_z.diagonal().array() += 1.0;
    const Eigen::LLT<Eigen::MatrixXd> llt(cov_z);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefiniteError("joint latent covariance is singular");
    const Eigen::MatrixXd solved = llt.solve(cross.transpose());  // m x p
    return sigma.diagonal() - (cross.array() * solved.transpose().array()).rowwise().sum().matrix();
}

}  // namespace nglf
