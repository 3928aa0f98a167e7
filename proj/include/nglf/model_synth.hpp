#pragma once

// Non-overlapping Gaussian latent factor (NGLF) generative model.
//
// Every observed variable x_i has exactly one latent parent z_pa(i):
//     x_i = z_pa(i) + eta_i,   Var(z_j) = b,  Var(eta_i) = a.
// Only the ratio s = b / a matters, so sampling fixes a = 1 and b = snr.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nglf/errors.hpp"
#include "nglf/random.hpp"

namespace nglf {

using Labels = std::vector<int>;

struct NglfSpec {
    int p = 0;
    int m = 0;
    double snr = 0.0;
    Labels partition;  // partition[i] = parent factor of variable i

    /// Contiguous equal blocks [0,..,0,1,..,1,...]; requires m | p.
    static NglfSpec equal_groups(int p, int m, double snr) {
        if (m < 1 || p < m || p % m != 0)
            throw ValidationError("equal groups need 1 <= m <= p and m dividing p (p=" +
                                  std::to_string(p) + ", m=" + std::to_string(m) + ")");
        NglfSpec spec{p, m, snr, Labels(static_cast<std::size_t>(p))};
        const int k = p / m;
        for (int i = 0; i < p; ++i) spec.partition[static_cast<std::size_t>(i)] = i / k;
        return spec;
    }

    void validate() const {
        if (m < 1 || p < m)
            throw ValidationError("NGLF spec needs p >= m >= 1 (p=" + std::to_string(p) +
                                  ", m=" + std::to_string(m) + ")");
        if (!(snr > 0.0) || !std::isfinite(snr))
            throw ValidationError("snr must be positive and finite");
        if (partition.size() != static_cast<std::size_t>(p))
            throw ValidationError("partition length " + std::to_string(partition.size()) +
                                  " does not match p=" + std::to_string(p));
        for (int label : partition)
            if (label < 0 || label >= m)
                throw ValidationError("partition label " + std::to_string(label) +
                                      " outside [0, m)");
    }

    /// True when every factor has exactly p/m children.
    bool has_equal_groups() const {
        if (p % m != 0) return false;
        std::vector<int> counts(static_cast<std::size_t>(m), 0);
        for (int label : partition) ++counts[static_cast<std::size_t>(label)];
        for (int c : counts)
            if (c != p / m) return false;
        return true;
    }

    double latent_variance() const { return snr; }
    double noise_variance() const { return 1.0; }
};

struct SyntheticDataset {
    Eigen::MatrixXd data;     // n x p
    Eigen::MatrixXd latents;  // n x m
    Labels labels;
    NglfSpec spec;
    std::uint64_t seed = 0;
};

/// Draw n i.i.d. samples. Per row, the m latents are drawn first, then the p noises.
inline SyntheticDataset generate_nglf(const NglfSpec& spec, int n, std::uint64_t seed) {
    spec.validate();
    if (n < 1) throw ValidationError("sample count must be >= 1");

    NormalStream rng(seed);
    const double latent_sd = std::sqrt(spec.latent_variance());
    const double noise_sd = std::sqrt(spec.noise_variance());

    SyntheticDataset out;
    out.data.resize(n, spec.p);
    out.latents.resize(n, spec.m);
    for (int row = 0; row < n; ++row) {
        for (int j = 0; j < spec.m; ++j) out.latents(row, j) = latent_sd * rng.normal();
        for (int i = 0; i < spec.p; ++i)
            out.data(row, i) =
                out.latents(row, spec.partition[static_cast<std::size_t>(i)]) +
                noise_sd * rng.normal();
    }
    out.labels = spec.partition;
    out.spec = spec;
    out.seed = seed;
    return out;
}

/// Sigma_ij = b [pa(i) = pa(j)] + a [i = j].
inline Eigen::MatrixXd population_covariance(const NglfSpec& spec) {
    spec.validate();
    const double a = spec.noise_variance();
    const double b = spec.latent_variance();
    Eigen::MatrixXd sigma(spec.p, spec.p);
    for (int i = 0; i < spec.p; ++i)
        for (int j = 0; j < spec.p; ++j) {
            const bool same = spec.partition[static_cast<std::size_t>(i)] ==
                              spec.partition[static_cast<std::size_t>(j)];
            sigma(i, j) = (same ? b : 0.0) + (i == j ? a : 0.0);
        }
    return sigma;
}

/// Rescale a covariance matrix to unit diagonal.
inline Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov) {
    const Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    return inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
}

/// Column-standardized data. Scales use the 1/n (population-style) standard
/// deviation, so every column satisfies <x> = 0 and <x^2> = 1 exactly.
struct StandardizedData {
    Eigen::MatrixXd data;  // n x p
    Eigen::VectorXd means;
    Eigen::VectorXd scales;

    Eigen::Index n() const { return data.rows(); }
    Eigen::Index p() const { return data.cols(); }

    /// Map other samples (e.g. held-out rows) into this standardized space.
    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const {
        if (raw.cols() != p())
            throw ValidationError("expected " + std::to_string(p()) + " columns, got " +
                                  std::to_string(raw.cols()));
        return (raw.rowwise() - means.transpose()).array().rowwise() /
               scales.transpose().array();
    }
};

inline StandardizedData standardize(const Eigen::MatrixXd& raw) {
    if (raw.rows() < 2) throw ValidationError("standardize needs at least 2 rows");
    if (raw.cols() < 1) throw ValidationError("standardize needs at least 1 column");
    const double n = static_cast<double>(raw.rows());

    StandardizedData out;
    out.means = raw.colwise().mean().transpose();
    out.data = raw.rowwise() - out.means.transpose();
    out.scales.resize(raw.cols());
    for (Eigen::Index c = 0; c < raw.cols(); ++c) {
        const double var = out.data.col(c).squaredNorm() / n;
        const double ref = std::max(1.0, out.means(c) * out.means(c));
        if (!(var > 1e-24 * ref)) throw DegenerateColumnError(static_cast<std::size_t>(c));
        out.scales(c) = std::sqrt(var);
        out.data.col(c) /= out.scales(c);
    }
    return out;
}

}  // namespace nglf
