#pragma once

// Pairwise statistics between observed variables X and latent factors
// Z = W X + noise (unit noise variance), computed without forming the p x p
// covariance when the source is a data matrix.
//
// All solver arithmetic only ever needs products A * Sigma for m x p matrices A.
// A second-moment source provides exactly that:
//   DataSource        A * Sigma = (1/n) (X A^T)^T X     O(m n p)
//   CovarianceSource  A * Sigma with an explicit Sigma  O(m p^2), test path
// and AnnealedSource replaces Sigma by (1 - eps^2) Sigma + eps^2 I.

#include <algorithm>
#include <cmath>
#include <concepts>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/model_synth.hpp"

namespace nglf {

template <typename S>
concept SecondMomentSource = requires(const S& s, const Eigen::MatrixXd& a) {
    { s.p() } -> std::convertible_to<Eigen::Index>;
    { s.cross(a) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Standardized n x p data. Holds a reference; the matrix must outlive the source.
class DataSource {
public:
    explicit DataSource(const Eigen::MatrixXd& x) : x_(&x) {}
    explicit DataSource(const StandardizedData& d) : x_(&d.data) {}

    Eigen::Index p() const { return x_->cols(); }
    Eigen::Index n() const { return x_->rows(); }
    const Eigen::MatrixXd& data() const { return *x_; }

    Eigen::MatrixXd cross(const Eigen::MatrixXd& a) const {
        const Eigen::MatrixXd y = (*x_) * a.transpose();  // n x m
        return (y.transpose() * (*x_)) / static_cast<double>(x_->rows());
    }

private:
    const Eigen::MatrixXd* x_;
};

/// Explicit unit-diagonal covariance (population-level fits).
class CovarianceSource {
public:
    explicit CovarianceSource(Eigen::MatrixXd sigma) : sigma_(std::move(sigma)) {
        if (sigma_.rows() != sigma_.cols()) throw ValidationError("covariance must be square");
        for (Eigen::Index i = 0; i < sigma_.rows(); ++i)
            if (std::abs(sigma_(i, i) - 1.0) > 1e-12)
                throw ValidationError("covariance source must have unit diagonal; use to_correlation");
    }

    Eigen::Index p() const { return sigma_.rows(); }
    const Eigen::MatrixXd& matrix() const { return sigma_; }

    Eigen::MatrixXd cross(const Eigen::MatrixXd& a) const { return a * sigma_; }

private:
    Eigen::MatrixXd sigma_;
};

template <SecondMomentSource S>
class AnnealedSource {
public:
    AnnealedSource(const S& base, double eps) : base_(&base), eps_(eps) {
        if (!(std::abs(eps) <= 1.0)) throw ValidationError("annealing eps must satisfy |eps| <= 1");
    }

    Eigen::Index p() const { return base_->p(); }
    double eps() const { return eps_; }

    Eigen::MatrixXd cross(const Eigen::MatrixXd& a) const {
        const double e2 = eps_ * eps_;
        if (e2 == 1.0) return a;
        if (e2 == 0.0) return base_->cross(a);
        return (1.0 - e2) * base_->cross(a) + e2 * a;
    }

private:
    const S* base_;
    double eps_;
};

/// Moment statistics consumed by the objective and its gradient.
///
///   z2  <Z_j^2> = (W S W^T)_jj + 1
///   R   correlation <X_i Z_j> / sqrt(<Z_j^2>), clipped to +-r_clip
///   B   R / (1 - R^2)
///   r   r_i = sum_j R_ji B_ji
///   M   (<Z_j Z_k> - delta_jk) / sqrt(<Z_j^2><Z_k^2>); diag M = (z2 - 1) / z2
///   Q   C B with C = M + diag(1 / z2), the full normalized latent covariance
///   q   q_i = sum_j Q_ji B_ji
///
/// Q includes the latent noise through C so that (1 + q - r^2) / (1 + r)^2 is
/// exactly <(X_i - nu_i)^2> for nu_i = sum_j B_ji Z_j / ((1 + r_i) sqrt(<Z_j^2>)).
struct MomentSet {
    Eigen::VectorXd z2;
    Eigen::MatrixXd R;
    Eigen::MatrixXd B;
    Eigen::VectorXd r;
    Eigen::MatrixXd M;
    Eigen::MatrixXd Q;
    Eigen::VectorXd q;

    Eigen::MatrixXd w_sigma;  // W Sigma_eps, unclipped
    Eigen::MatrixXd gram;     // W Sigma_eps W^T
    int clipped = 0;          // entries of R hit by the clip

    Eigen::Index m() const { return R.rows(); }
    Eigen::Index p() const { return R.cols(); }
};

inline constexpr double default_r_clip = 1.0 - 1e-6;

/// Build the moment set from W Sigma_eps and W Sigma_eps W^T.
inline MomentSet moments_from_products(Eigen::MatrixXd w_sigma, Eigen::MatrixXd gram,
                                       double r_clip = default_r_clip) {
    MomentSet ms;
    const Eigen::Index m = w_sigma.rows();
    ms.z2 = gram.diagonal().array() + 1.0;
    for (Eigen::Index j = 0; j < m; ++j)
        if (!std::isfinite(ms.z2(j)) || !w_sigma.row(j).allFinite())
            throw NumericError("non-finite latent moment", static_cast<std::size_t>(j));

    const Eigen::VectorXd inv_sd = ms.z2.cwiseSqrt().cwiseInverse();
    ms.R = inv_sd.asDiagonal() * w_sigma;
    for (Eigen::Index i = 0; i < ms.R.size(); ++i) {
        double& v = ms.R.data()[i];
        if (v > r_clip) {
            v = r_clip;
            ++ms.clipped;
        } else if (v < -r_clip) {
            v = -r_clip;
            ++ms.clipped;
        }
    }

    ms.B = ms.R.array() / (1.0 - ms.R.array().square());
    ms.r = (ms.R.array() * ms.B.array()).colwise().sum().transpose();
    ms.M = inv_sd.asDiagonal() * gram * inv_sd.asDiagonal();

    Eigen::MatrixXd c = ms.M;
    c.diagonal() += ms.z2.cwiseInverse();
    ms.Q = c * ms.B;
    ms.q = (ms.Q.array() * ms.B.array()).colwise().sum().transpose();

    ms.w_sigma = std::move(w_sigma);
    ms.gram = std::move(gram);
    return ms;
}

template <SecondMomentSource S>
MomentSet compute_moments(const Eigen::MatrixXd& w, const S& source, double eps,
                          double r_clip = default_r_clip) {
    if (w.cols() != source.p())
        throw ValidationError("weight matrix has " + std::to_string(w.cols()) +
                              " columns but data has " + std::to_string(source.p()));
    const AnnealedSource<S> annealed(source, eps);
    Eigen::MatrixXd ws = annealed.cross(w);
    Eigen::MatrixXd gram = ws * w.transpose();
    gram = 0.5 * (gram + gram.transpose()).eval();
    return moments_from_products(std::move(ws), std::move(gram), r_clip);
}

}  // namespace nglf
