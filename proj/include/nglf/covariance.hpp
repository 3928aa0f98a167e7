#pragma once

// Covariance estimates and held-out Gaussian negative log-likelihood.
//
// The factor estimate lives in standardized space as diag(d) + V V^T with
//     V_ij = B_ji / (1 + r_i),   d_i = 1 - sum_j V_ij^2,
// so its off-diagonal entries are (B^T B)_il / ((1 + r_i)(1 + r_l)) and its
// diagonal is exactly 1. It is never materialized for likelihoods: log det
// uses the matrix determinant lemma and solves use Woodbury, O(p m^2) per row.

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/model_synth.hpp"
#include "nglf/solver.hpp"

namespace nglf {

enum class EstimateKind { factor, empirical, diagonal, shrinkage, ground_truth };

inline std::string to_string(EstimateKind k) {
    switch (k) {
        case EstimateKind::factor: return "factor";
        case EstimateKind::empirical: return "empirical";
        case EstimateKind::diagonal: return "diagonal";
        case EstimateKind::shrinkage: return "shrinkage";
        case EstimateKind::ground_truth: return "ground_truth";
    }
    return "?";
}

inline constexpr double default_diag_floor = 1e-6;

struct CovarianceEstimate {
    EstimateKind kind = EstimateKind::diagonal;

    // factor kind
    Eigen::MatrixXd loadings;  // p x m
    Eigen::VectorXd diag;      // p
    int clamped = 0;           // diagonal entries raised to the floor

    // dense kinds
    Eigen::MatrixXd dense;     // p x p
    double lambda = 0.0;       // shrinkage intensity

    // standardized space -> original units: x = means + scales .* x_std
    Eigen::VectorXd means;
    Eigen::VectorXd scales;

    bool factored() const { return kind == EstimateKind::factor; }
    Eigen::Index p() const { return factored() ? loadings.rows() : dense.rows(); }

    /// Explicit p x p matrix in standardized space.
    Eigen::MatrixXd materialize() const {
        if (!factored()) return dense;
        Eigen::MatrixXd out = loadings * loadings.transpose();
        out.diagonal() += diag;
        return out;
    }

    /// Explicit p x p matrix in original units.
    Eigen::MatrixXd materialize_original() const {
        return scales.asDiagonal() * materialize() * scales.asDiagonal();
    }
};

inline CovarianceEstimate factor_covariance(const MomentSet& ms, const Eigen::VectorXd& means,
                                            const Eigen::VectorXd& scales,
                                            double floor = default_diag_floor) {
    CovarianceEstimate est;
    est.kind = EstimateKind::factor;
    est.loadings = (ms.B.array().rowwise() / (1.0 + ms.r.array()).transpose()).matrix().transpose();
    est.diag = 1.0 - est.loadings.rowwise().squaredNorm().array();
    for (Eigen::Index i = 0; i < est.diag.size(); ++i)
        if (!(est.diag(i) >= floor)) {
            est.diag(i) = floor;
            ++est.clamped;
        }
    est.means = means;
    est.scales = scales;
    return est;
}

inline CovarianceEstimate factor_covariance(const FactorModel& model,
                                            double floor = default_diag_floor) {
    return factor_covariance(model.moments, model.means, model.scales, floor);
}

namespace detail {

inline CovarianceEstimate dense_estimate(EstimateKind kind, Eigen::MatrixXd cov,
                                         Eigen::VectorXd means, Eigen::VectorXd scales) {
    CovarianceEstimate est;
    est.kind = kind;
    est.dense = std::move(cov);
    est.means = std::move(means);
    est.scales = std::move(scales);
    return est;
}

}  // namespace detail

/// (1/n) X^T X of the rows as given; no re-centering.
inline CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& x) {
    if (x.rows() < 1) throw ValidationError("empirical covariance needs at least one row");
    const Eigen::Index p = x.cols();
    return detail::dense_estimate(EstimateKind::empirical,
                                  x.transpose() * x / static_cast<double>(x.rows()),
                                  Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p));
}

inline CovarianceEstimate empirical_covariance(const StandardizedData& data) {
    CovarianceEstimate est = empirical_covariance(data.data);
    est.means = data.means;
    est.scales = data.scales;
    return est;
}

/// Sample variances on the diagonal, zeros elsewhere.
inline CovarianceEstimate diagonal_covariance(const Eigen::MatrixXd& x) {
    if (x.rows() < 1) throw ValidationError("diagonal covariance needs at least one row");
    const Eigen::Index p = x.cols();
    const Eigen::VectorXd var = x.colwise().squaredNorm().transpose() / static_cast<double>(x.rows());
    return detail::dense_estimate(EstimateKind::diagonal, Eigen::MatrixXd(var.asDiagonal()),
                                  Eigen::VectorXd::Zero(p), Eigen::VectorXd::Ones(p));
}

inline CovarianceEstimate diagonal_covariance(const StandardizedData& data) {
    CovarianceEstimate est = diagonal_covariance(data.data);
    est.means = data.means;
    est.scales = data.scales;
    return est;
}

/// (1 - lambda) empirical + lambda diagonal, for a fixed intensity lambda.
inline CovarianceEstimate shrinkage_covariance(const StandardizedData& data, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    const CovarianceEstimate emp = empirical_covariance(data);
    const CovarianceEstimate dia = diagonal_covariance(data);
    CovarianceEstimate est = detail::dense_estimate(
        EstimateKind::shrinkage, (1.0 - lambda) * emp.dense + lambda * dia.dense, data.means,
        data.scales);
    est.lambda = lambda;
    return est;
}

inline CovarianceEstimate shrinkage_covariance(const Eigen::MatrixXd& x, double lambda) {
    StandardizedData raw{x, Eigen::VectorXd::Zero(x.cols()), Eigen::VectorXd::Ones(x.cols())};
    return shrinkage_covariance(raw, lambda);
}

/// Known covariance in original units (zero mean).
inline CovarianceEstimate ground_truth_covariance(const Eigen::MatrixXd& sigma) {
    const Eigen::Index p = sigma.rows();
    return detail::dense_estimate(EstimateKind::ground_truth, sigma, Eigen::VectorXd::Zero(p),
                                  Eigen::VectorXd::Ones(p));
}

/// Relative eigenvalue threshold below which a dense estimate counts as singular.
inline constexpr double pd_rel_tol = 1e-10;

/// Per-row NLL in standardized space, before the Jacobian of the scaling.
inline Eigen::VectorXd gaussian_nll_rows_standardized(const CovarianceEstimate& est,
                                                      const Eigen::MatrixXd& xs) {
    const double p = static_cast<double>(est.p());
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double logdet = 0.0;
    Eigen::VectorXd quad(xs.rows());

    if (est.factored()) {
        for (Eigen::Index i = 0; i < est.diag.size(); ++i)
            if (!(est.diag(i) > 0.0))
                throw NotPositiveDefiniteError("factor estimate has a non-positive diagonal at " +
                                               std::to_string(i));
        const Eigen::VectorXd inv_d = est.diag.cwiseInverse();
        const Eigen::MatrixXd dv = inv_d.asDiagonal() * est.loadings;  // D^-1 V
        Eigen::MatrixXd cap = est.loadings.transpose() * dv;           // V^T D^-1 V
        cap.diagonal().array() += 1.0;
        const Eigen::LLT<Eigen::MatrixXd> llt(cap);
        if (llt.info() != Eigen::Success)
            throw NotPositiveDefiniteError("capacitance matrix is not positive definite");
        logdet = est.diag.array().log().sum() +
                 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        const Eigen::MatrixXd t = xs * dv;  // rows: V^T D^-1 x
        const Eigen::MatrixXd lt = llt.matrixL().solve(t.transpose());
        quad = (xs.array().square().rowwise() * inv_d.transpose().array()).rowwise().sum().matrix() -
               lt.colwise().squaredNorm().transpose();
    } else {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(est.dense);
        if (eig.info() != Eigen::Success)
            throw NotPositiveDefiniteError("eigendecomposition failed");
        const Eigen::VectorXd& ev = eig.eigenvalues();
        const double max_ev = ev.maxCoeff();
        if (!(ev.minCoeff() > pd_rel_tol * std::max(max_ev, 0.0)) || !(max_ev > 0.0))
            throw NotPositiveDefiniteError(to_string(est.kind) +
                                           " covariance is not positive definite (min eigenvalue " +
                                           std::to_string(ev.minCoeff()) + ")");
        logdet = ev.array().log().sum();
        const Eigen::MatrixXd proj = xs * eig.eigenvectors();
        quad = (proj.array().square().rowwise() / ev.transpose().array()).rowwise().sum().matrix();
    }
    return 0.5 * (p * log2pi + logdet + quad.array()).matrix();
}

/// Mean NLL per sample (nats) of rows in original units. Rows are mapped into
/// the estimate's standardized space with the training means and scales.
inline double gaussian_nll(const CovarianceEstimate& est, const Eigen::MatrixXd& test) {
    if (test.cols() != est.p())
        throw ValidationError("test data has " + std::to_string(test.cols()) +
                              " columns, estimate has " + std::to_string(est.p()));
    if (test.rows() < 1) throw ValidationError("test data is empty");
    const Eigen::MatrixXd xs = (test.rowwise() - est.means.transpose()).array().rowwise() /
                               est.scales.transpose().array();
    const Eigen::VectorXd rows = gaussian_nll_rows_standardized(est, xs);
    return rows.mean() + est.scales.array().log().sum();
}

}  // namespace nglf
