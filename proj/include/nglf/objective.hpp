#pragma once

// Upper-bound objective on TC(X|Z) + TC(Z) and its quasi-Newton machinery.
//
// Three coordinate systems are involved:
//   W  stored weights, Z_j = W_j . x + N(0, 1)
//   R  correlations R = W Sigma / sqrt(<Z^2>); the objective is differentiated here
//   U  U = R Lambda = W / sqrt(<Z^2>) with Lambda = Sigma^-1; steps are taken here
// and W = U / sqrt(1 - U Sigma U^T) maps back. Lambda never has to be formed:
// every Lambda-bearing expression reduces to W and <Z^2>.

#include <cmath>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/moments.hpp"

namespace nglf {

/// Per-variable residual variance <(X_i - nu_i)^2> = (1 + q_i - r_i^2) / (1 + r_i)^2.
inline Eigen::VectorXd nu_conditional_variance(const MomentSet& ms) {
    return (1.0 + ms.q.array() - ms.r.array().square()) / (1.0 + ms.r.array()).square();
}

/// O = sum_i 1/2 log(1 + q_i - r_i^2) - sum_i log(1 + r_i) + sum_j 1/2 log <Z_j^2>
inline double objective(const MomentSet& ms) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < ms.p(); ++i) {
        const double resid = 1.0 + ms.q(i) - ms.r(i) * ms.r(i);
        const double shrink = 1.0 + ms.r(i);
        if (!(resid > 0.0) || !(shrink > 0.0))
            throw NumericError("objective log-domain violation", static_cast<std::size_t>(i));
        total += 0.5 * std::log(resid) - std::log(shrink);
    }
    for (Eigen::Index j = 0; j < ms.m(); ++j) {
        if (!(ms.z2(j) > 0.0))
            throw NumericError("non-positive latent variance", static_cast<std::size_t>(j));
        total += 0.5 * std::log(ms.z2(j));
    }
    if (!std::isfinite(total)) throw NumericError("non-finite objective", 0);
    return total;
}

/// Gradient of the objective with respect to R (m x p).
///
/// G = [(1 + R^2) Q - 2 R r] / [(1 - R^2)^2 (1 + q - r^2)]
///     - 2 R / [(1 - R^2)^2 (1 + r)]
///     + H W,
/// with H_jj = sqrt(<Z_j^2>) and, for k != j,
///      H_jk = sum_i B_ji B_ki / (1 + q_i - r_i^2) / sqrt(<Z_k^2>).
/// The second term is the removable-singularity form of -2 B^2 / (R (1 + r)).
inline Eigen::MatrixXd gradient(const MomentSet& ms, const Eigen::MatrixXd& w) {
    const Eigen::ArrayXd resid = 1.0 + ms.q.array() - ms.r.array().square();
    for (Eigen::Index i = 0; i < resid.size(); ++i)
        if (!(resid(i) > 0.0))
            throw NumericError("gradient log-domain violation", static_cast<std::size_t>(i));

    const Eigen::ArrayXd inv_resid = resid.inverse();
    Eigen::MatrixXd g(ms.m(), ms.p());
    for (Eigen::Index i = 0; i < ms.p(); ++i) {
        const double ri = ms.r(i);
        const double inv_shrink = 1.0 / (1.0 + ri);
        for (Eigen::Index j = 0; j < ms.m(); ++j) {
            const double rji = ms.R(j, i);
            const double r2 = rji * rji;
            const double denom = (1.0 - r2) * (1.0 - r2);
            g(j, i) = ((1.0 + r2) * ms.Q(j, i) - 2.0 * rji * ri) / denom * inv_resid(i) -
                      2.0 * rji / denom * inv_shrink;
        }
    }

    const Eigen::MatrixXd weighted_b = ms.B * inv_resid.matrix().asDiagonal();
    Eigen::MatrixXd h = weighted_b * ms.B.transpose();
    const Eigen::VectorXd inv_sd = ms.z2.cwiseSqrt().cwiseInverse();
    h = h * inv_sd.asDiagonal();
    h.diagonal() = ms.z2.cwiseSqrt();

    return g + h * w;
}

/// Quasi-Newton direction in U coordinates.
///
/// The approximate Hessian block of row j in R coordinates is diagonal plus
/// rank one, z Lambda + 2 z W_j^T W_j with z = <Z_j^2>. Inverting it by
/// Sherman-Morrison, applying it to G_j and mapping to U = R Lambda gives
///     Delta_U_j = G_j / z - (R_j . G_j) W_j / (sqrt(z) (z - 1/2)).
/// The denominator is at least 1/2 because <Z_j^2> >= 1.
inline Eigen::MatrixXd qn_direction(const Eigen::MatrixXd& g, const MomentSet& ms,
                                    const Eigen::MatrixXd& w) {
    Eigen::MatrixXd delta(g.rows(), g.cols());
    for (Eigen::Index j = 0; j < g.rows(); ++j) {
        const double z = ms.z2(j);
        const double rg = ms.R.row(j).dot(g.row(j));
        delta.row(j) = g.row(j) / z - (rg / (std::sqrt(z) * (z - 0.5))) * w.row(j);
    }
    return delta;
}

}  // namespace nglf
