#include <gtest/gtest.h>

#include "nglf/nglf.hpp"
#include "oracles.hpp"

using namespace nglf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double rel_err(const MatrixXd& a, const MatrixXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

SolverConfig quick_config(int m, std::uint64_t seed = 0) {
    SolverConfig c;
    c.m = m;
    c.seed = seed;
    return c;
}

}  // namespace

// ---- moments --------------------------------------------------------------

TEST(Moments, ZeroWeights) {
    const auto d = oracle::random_data(30, 5, 1);
    const auto ms = compute_moments(MatrixXd::Zero(2, 5), DataSource(d), 0.0);
    EXPECT_TRUE(ms.z2.isOnes(0.0));
    EXPECT_TRUE(ms.R.isZero(0.0));
    EXPECT_TRUE(ms.B.isZero(0.0));
    EXPECT_TRUE(ms.r.isZero(0.0));
    EXPECT_TRUE(ms.q.isZero(0.0));
    EXPECT_TRUE(ms.M.isZero(0.0));
    EXPECT_EQ(objective(ms), 0.0);
}

TEST(Moments, FullAnnealingIgnoresData) {
    const auto d = oracle::random_data(30, 5, 2);
    NormalStream rng(3);
    const MatrixXd w = rng.normal_matrix(2, 5, 0.4);
    const auto ms = compute_moments(w, DataSource(d), 1.0);
    for (int j = 0; j < 2; ++j) {
        const double z = w.row(j).squaredNorm() + 1.0;
        for (int i = 0; i < 5; ++i) EXPECT_NEAR(ms.R(j, i), w(j, i) / std::sqrt(z), 1e-14);
    }
}

TEST(Moments, MatchExplicitCovariance) {
    const auto d = oracle::random_data(50, 6, 4);
    NormalStream rng(5);
    const MatrixXd w = rng.normal_matrix(2, 6, 0.3);
    for (double eps : {0.0, 0.4, 0.9}) {
        const MatrixXd sigma = oracle::annealed_covariance(d.data, eps);
        const auto ms = compute_moments(w, DataSource(d), eps);
        const VectorXd z2 = (w * sigma * w.transpose()).diagonal().array() + 1.0;
        const MatrixXd R = z2.cwiseSqrt().cwiseInverse().asDiagonal() * w * sigma;
        EXPECT_LT((ms.R - R).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((ms.z2 - z2).cwiseAbs().maxCoeff(), 1e-12);
        // same moments through the explicit-covariance source
        const auto ms2 = compute_moments(w, CovarianceSource(to_correlation(sigma)), 0.0);
        EXPECT_LT((ms2.R - R).cwiseAbs().maxCoeff(), 1e-12);
        // diag M = (z2 - 1) / z2
        EXPECT_LT((ms.M.diagonal().array() - (z2.array() - 1.0) / z2.array()).abs().maxCoeff(), 1e-12);
        EXPECT_GE(ms.z2.minCoeff(), 1.0);
    }
}

TEST(Moments, ClipBoundsCorrelations) {
    const auto d = oracle::random_data(40, 3, 6);
    MatrixXd w = MatrixXd::Zero(1, 3);
    w(0, 0) = 1e5;  // Z nearly equal to X_0
    const auto ms = compute_moments(w, DataSource(d), 0.0, 0.99);
    EXPECT_LE(ms.R.cwiseAbs().maxCoeff(), 0.99);
    EXPECT_GE(ms.clipped, 1);
}

TEST(Moments, NonFiniteWeightsReportFactor) {
    const auto d = oracle::random_data(20, 4, 7);
    MatrixXd w = MatrixXd::Zero(3, 4);
    w(2, 1) = std::numeric_limits<double>::quiet_NaN();
    try {
        compute_moments(w, DataSource(d), 0.0);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(e.index(), 2u);
    }
}

TEST(Moments, CovarianceSourceRequiresUnitDiagonal) {
    EXPECT_THROW(CovarianceSource(2.0 * MatrixXd::Identity(3, 3)), ValidationError);
}

// ---- objective ------------------------------------------------------------

TEST(Objective, EqualsDirectConditionalVarianceForm) {
    for (int t = 0; t < 10; ++t) {
        const int p = 4 + t % 5, m = 1 + t % 3;
        const auto d = oracle::random_data(50, p, 100 + t);
        NormalStream rng(200 + t);
        const MatrixXd w = rng.normal_matrix(m, p, 0.5);
        const double eps = 0.1 * t;
        const auto ms = compute_moments(w, DataSource(d), eps);
        ASSERT_EQ(ms.clipped, 0);
        EXPECT_NEAR(objective(ms), oracle::eq5_objective(w, oracle::annealed_covariance(d.data, eps)),
                    1e-10);
    }
}

TEST(Objective, NuVarianceMatchesExpansion) {
    const auto d = oracle::random_data(60, 5, 9);
    NormalStream rng(10);
    const MatrixXd w = rng.normal_matrix(2, 5, 0.6);
    const auto ms = compute_moments(w, DataSource(d), 0.0);
    const VectorXd v = nu_conditional_variance(ms);
    EXPECT_NEAR(0.5 * v.array().log().sum() + 0.5 * ms.z2.array().log().sum(),
                oracle::eq5_objective(w, oracle::annealed_covariance(d.data, 0.0)), 1e-10);
}

TEST(Objective, TrueFactorsBeatIndependence) {
    const auto spec = NglfSpec::equal_groups(12, 3, 2.0);
    const CovarianceSource src(to_correlation(population_covariance(spec)));
    MatrixXd w = MatrixXd::Zero(3, 12);
    for (int i = 0; i < 12; ++i) w(i / 4, i) = 0.5;
    EXPECT_LT(objective(compute_moments(w, src, 0.0)), 0.0);
}

TEST(Objective, LogDomainViolationNamesIndex) {
    MomentSet ms = compute_moments(MatrixXd::Zero(1, 3), CovarianceSource(MatrixXd::Identity(3, 3)), 0.0);
    ms.r(1) = -2.0;
    try {
        objective(ms);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(e.index(), 1u);
    }
}

// ---- gradient -------------------------------------------------------------

TEST(Gradient, MatchesFiniteDifferencesInR) {
    for (int t = 0; t < 20; ++t) {
        const int p = 3 + t % 8, m = 1 + t % 3;
        const auto d = oracle::random_data(50, p, 300 + t);
        NormalStream rng(400 + t);
        const MatrixXd w = rng.normal_matrix(m, p, 0.4);
        const double eps = (t % 4) * 0.2;
        const MatrixXd sigma = oracle::annealed_covariance(d.data, eps);
        const auto ms = compute_moments(w, DataSource(d), eps);
        ASSERT_EQ(ms.clipped, 0);
        const MatrixXd g = gradient(ms, w);
        const MatrixXd fd = oracle::fd_gradient_r(ms.R, sigma.inverse());
        EXPECT_LT(rel_err(g, fd), 1e-5) << "instance " << t;
    }
}

TEST(Gradient, VanishesAtOrigin) {
    const auto d = oracle::random_data(30, 6, 11);
    const MatrixXd w = MatrixXd::Zero(2, 6);
    EXPECT_TRUE(gradient(compute_moments(w, DataSource(d), 0.0), w).isZero(0.0));
}

TEST(Gradient, SingleFactorReduction) {
    const auto d = oracle::random_data(40, 5, 12);
    NormalStream rng(13);
    const MatrixXd w = rng.normal_matrix(1, 5, 0.5);
    const auto ms = compute_moments(w, DataSource(d), 0.0);
    MatrixXd expected(1, 5);
    for (int i = 0; i < 5; ++i) {
        const double R = ms.R(0, i), r = ms.r(i), q = ms.q(i), z = ms.z2(0);
        const double den = (1 - R * R) * (1 - R * R);
        expected(0, i) = ((1 + R * R) * ms.Q(0, i) - 2 * R * r) / (den * (1 + q - r * r)) -
                         2 * R / (den * (1 + r)) + std::sqrt(z) * w(0, i);
    }
    EXPECT_LT((gradient(ms, w) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

// ---- quasi-Newton direction ----------------------------------------------

TEST(QnDirection, MatchesExplicitDpr1Inverse) {
    for (int t = 0; t < 8; ++t) {
        const int p = 4 + t, m = 1 + t % 3;
        const auto d = oracle::random_data(50, p, 500 + t);
        NormalStream rng(600 + t);
        const MatrixXd w = rng.normal_matrix(m, p, 0.4);
        const double eps = 0.15 * (t % 3);
        const auto ms = compute_moments(w, DataSource(d), eps);
        const MatrixXd g = gradient(ms, w);
        const MatrixXd expected =
            oracle::dpr1_direction(g, w, oracle::annealed_covariance(d.data, eps));
        EXPECT_LT((qn_direction(g, ms, w) - expected).cwiseAbs().maxCoeff(),
                  1e-10 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
    }
}

TEST(QnDirection, TrivialCases) {
    const auto d = oracle::random_data(30, 4, 14);
    const MatrixXd w0 = MatrixXd::Zero(1, 4);
    const auto ms0 = compute_moments(w0, DataSource(d), 0.0);
    const MatrixXd g = MatrixXd::Constant(1, 4, 0.3);
    EXPECT_LT((qn_direction(g, ms0, w0) - g).cwiseAbs().maxCoeff(), 1e-15);

    NormalStream rng(15);
    const MatrixXd w = rng.normal_matrix(2, 4, 0.5);
    EXPECT_TRUE(qn_direction(MatrixXd::Zero(2, 4), compute_moments(w, DataSource(d), 0.0), w)
                    .isZero(0.0));
}

// ---- coordinates ----------------------------------------------------------

TEST(RecoverWeights, RoundTripThroughU) {
    const auto d = oracle::random_data(80, 6, 16);
    NormalStream rng(17);
    const MatrixXd w = rng.normal_matrix(2, 6, 0.5);
    const DataSource src(d);
    const auto ms = compute_moments(w, src, 0.0);
    const MatrixXd lambda = oracle::annealed_covariance(d.data, 0.0).inverse();
    const MatrixXd u = ms.R * lambda;
    const auto back = recover_weights(u, src, 0.0);
    ASSERT_TRUE(back.has_value());
    EXPECT_LT((*back - w).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_TRUE(recover_weights(MatrixXd::Zero(2, 6), src, 0.0)->isZero(0.0));
}

TEST(RecoverWeights, RejectsOutsideTheDomain) {
    const auto d = oracle::random_data(40, 4, 18);
    MatrixXd u = MatrixXd::Zero(1, 4);
    u(0, 0) = 1.01;  // U Sigma U^T > 1 for a unit-variance column
    EXPECT_FALSE(recover_weights(u, DataSource(d), 0.0).has_value());
    u(0, 0) = 1.0 - 1e-9;
    const auto w = recover_weights(u, DataSource(d), 0.0);
    ASSERT_TRUE(w.has_value());
    EXPECT_GT(w->norm(), 1e3);
}

// ---- line search ----------------------------------------------------------

TEST(LineSearch, ZeroDirectionKeepsState) {
    const auto d = oracle::random_data(40, 5, 19);
    NormalStream rng(20);
    const DataSource src(d);
    const auto cfg = quick_config(2);
    const auto st = make_state(rng.normal_matrix(2, 5, 0.3), src, 0.0, cfg.r_clip);
    const auto ls = line_search(st, gradient(st.ms, st.w), MatrixXd::Zero(2, 5), src, 0.0, cfg);
    EXPECT_TRUE(ls.accepted);
    EXPECT_EQ(ls.alpha, 1.0);
    EXPECT_EQ(ls.state.objective, st.objective);
}

TEST(LineSearch, HugeStepIsShrunk) {
    const auto d = oracle::random_data(40, 6, 21);
    NormalStream rng(22);
    const DataSource src(d);
    const auto cfg = quick_config(2);
    const auto st = make_state(rng.normal_matrix(2, 6, 0.3), src, 0.0, cfg.r_clip);
    const MatrixXd g = gradient(st.ms, st.w);
    const auto ls = line_search(st, g, 1e6 * qn_direction(g, st.ms, st.w), src, 0.0, cfg);
    ASSERT_TRUE(ls.accepted);
    EXPECT_LT(ls.alpha, 1e-3);
    EXPECT_LT(ls.state.objective, st.objective);
    // trial states are assembled from cached products; they must equal a fresh evaluation
    const auto fresh = compute_moments(ls.state.w, src, 0.0);
    EXPECT_NEAR(objective(fresh), ls.state.objective, 1e-10);
}

TEST(LineSearch, AscentDirectionIsRejected) {
    const auto d = oracle::random_data(40, 5, 23);
    NormalStream rng(24);
    const DataSource src(d);
    const auto cfg = quick_config(1);
    const auto st = make_state(rng.normal_matrix(1, 5, 0.3), src, 0.0, cfg.r_clip);
    const MatrixXd g = gradient(st.ms, st.w);
    EXPECT_FALSE(line_search(st, g, -qn_direction(g, st.ms, st.w), src, 0.0, cfg).accepted);
}

TEST(LineSearch, FullStepNearOptimum) {
    const auto ds = generate_nglf(NglfSpec::equal_groups(32, 4, 5.0), 400, 25);
    const auto data = standardize(ds.data);
    const auto model = fit(data, quick_config(4, 1));
    const DataSource src(data);
    const SolverConfig cfg = quick_config(4);
    SolverState st = make_state(model.w, src, 0.0, cfg.r_clip);
    const MatrixXd g = gradient(st.ms, st.w);
    const auto ls = line_search(st, g, qn_direction(g, st.ms, st.w), src, 0.0, cfg);
    ASSERT_TRUE(ls.accepted);
    EXPECT_EQ(ls.alpha, 1.0);
}

// ---- fit ------------------------------------------------------------------

TEST(Init, ScaleAndDeterminism) {
    const MatrixXd a = init_weights(400, 50, 9);
    EXPECT_TRUE(a == init_weights(400, 50, 9));
    EXPECT_NEAR(a.rowwise().norm().mean(), 1.0, 0.02);
    const MatrixXd v = init_weights(400, 50, 9, InitScale::variance);
    EXPECT_NEAR(v.rowwise().norm().mean(), std::pow(400.0, 0.25), 0.1);
    EXPECT_EQ(init_weights(1, 1, 3).size(), 1);
}

TEST(Config, Validation) {
    SolverConfig c = quick_config(2);
    c.anneal_schedule = {0.5};
    EXPECT_THROW(c.validate(), ValidationError);
    c = quick_config(2);
    c.r_clip = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = quick_config(2);
    c.armijo_c1 = 0.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = quick_config(0);
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Fit, RecoversHighSnrStructure) {
    const auto spec = NglfSpec::equal_groups(64, 8, 5.0);
    const auto ds = generate_nglf(spec, 300, 31);
    FitTrace trace;
    const auto model = fit(standardize(ds.data), quick_config(8, 32), &trace);
    EXPECT_GE(nmi(cluster_assignment(model), ds.labels), 0.99);
    EXPECT_FALSE(trace.any_stalled());
}

TEST(Fit, IndependentDataBoundedBySampleTc) {
    // Latent factors can only explain the spurious sample correlations.
    NormalStream rng(33);
    const auto data = standardize(rng.normal_matrix(300, 100));
    FitTrace trace;
    const auto model = fit(data, quick_config(10, 34), &trace);
    const MatrixXd sample = data.data.transpose() * data.data / 300.0;
    EXPECT_LE(-model.objective, gaussian_total_correlation(sample) + 1e-9);
    EXPECT_GE(-model.objective, 0.0);
}

TEST(Fit, DeterministicAndMonotone) {
    const auto ds = generate_nglf(NglfSpec::equal_groups(40, 5, 1.0), 200, 35);
    const auto data = standardize(ds.data);
    FitTrace t1, t2;
    const auto a = fit(data, quick_config(5, 36), &t1);
    const auto b = fit(data, quick_config(5, 36), &t2);
    EXPECT_TRUE(a.w == b.w);
    EXPECT_EQ(a.objective, b.objective);
    for (std::size_t k = 1; k < t1.entries.size(); ++k)
        if (t1.entries[k].stage == t1.entries[k - 1].stage) {
            EXPECT_LE(t1.entries[k].objective, t1.entries[k - 1].objective);
        }
    EXPECT_EQ(t1.stages.size(), 6u);
    EXPECT_EQ(t1.stages.back().eps, 0.0);
}

TEST(Fit, RejectsBadInput) {
    EXPECT_THROW(fit(standardize(MatrixXd::Random(2, 3)), quick_config(0)), ValidationError);
    const auto d = oracle::random_data(20, 3, 37);
    EXPECT_THROW(fit_from(DataSource(d), quick_config(2), MatrixXd::Zero(3, 3)), ValidationError);
}

TEST(Fit, PopulationFitIsTight) {
    // At a converged population fit, nu is the exact conditional mean.
    const auto spec = NglfSpec::equal_groups(24, 3, 2.0);
    const MatrixXd sigma = to_correlation(population_covariance(spec));
    SolverConfig cfg = quick_config(3, 38);
    cfg.rel_tol = 1e-13;
    const auto model = fit(CovarianceSource(sigma), cfg);
    const VectorXd nu = nu_conditional_variance(model.moments);
    const VectorXd exact = exact_conditional_variance(model.w, sigma);
    EXPECT_LT((nu - exact).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_EQ(nmi(cluster_assignment(model), spec.partition), 1.0);
}
