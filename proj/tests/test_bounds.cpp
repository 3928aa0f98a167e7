#include <gtest/gtest.h>

#include <cmath>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "nglf/bounds.hpp"

using namespace nglf::bounds;
using nglf::ValidationError;

namespace {

// log(p! / ((p/m)!)^m / m!) with exact integers.
double log_structures_exact(int p, int m) {
    using boost::multiprecision::cpp_int;
    auto fact = [](int k) {
        cpp_int f = 1;
        for (int i = 2; i <= k; ++i) f *= i;
        return f;
    };
    cpp_int denom = fact(m);
    for (int j = 0; j < m; ++j) denom *= fact(p / m);
    const cpp_int ratio = fact(p) / denom;
    EXPECT_EQ(ratio * denom, fact(p));
    using big = boost::multiprecision::cpp_bin_float_50;
    return static_cast<double>(log(big(ratio)));
}

double n_min(double p, int m, double s, double e = 0.0) {
    return sample_complexity_lower_bound_real({p, m, s, e}).n_min;
}

}  // namespace

TEST(LogNumStructures, SmallCases) {
    EXPECT_NEAR(log_num_structures(8, 8), 0.0, 1e-12);
    EXPECT_NEAR(log_num_structures(4, 2), std::log(3.0), 1e-12);
    EXPECT_NEAR(log_num_structures(6, 3), std::log(15.0), 1e-12);
    EXPECT_THROW(log_num_structures(10, 3), ValidationError);
}

TEST(LogNumStructures, MatchesBigIntegerOracle) {
    for (auto [p, m] : {std::pair{64, 8}, std::pair{60, 4}, std::pair{128, 16}, std::pair{300, 3}}) {
        const double exact = log_structures_exact(p, m);
        EXPECT_NEAR(log_num_structures(p, m), exact, 1e-9 * exact) << p << " " << m;
    }
}

TEST(LogNumStructures, StirlingWithinOnePercent) {
    for (int m : {2, 8, 64})
        for (int mult : {64, 128, 1024}) {
            const double p = static_cast<double>(m) * mult;
            const double stirling = p * std::log(m) + 0.5 * std::log(p / m) -
                                    0.5 * m * std::log(m * p * 2.0 * M_PI / std::exp(2.0));
            const double exact = log_num_structures(static_cast<int>(p), m);
            EXPECT_LT(std::abs(stirling - exact) / exact, 0.01) << m << " " << p;
        }
}

TEST(Bound, PaperThresholdAt584) {
    // n = 300, m = 64, s = 0.1, eps = 0
    EXPECT_GT(n_min(583, 64, 0.1), 300.0);
    EXPECT_GT(n_min(584, 64, 0.1), 300.0);
    EXPECT_LT(n_min(585, 64, 0.1), 300.0);
    const auto rp = min_recoverable_p(300, 64, 0.1, 0.0);
    ASSERT_TRUE(rp.reachable);
    EXPECT_EQ(static_cast<long long>(std::floor(rp.crossing)), 584);
    EXPECT_EQ(rp.smallest_integer, 585);
    EXPECT_EQ(rp.smallest_multiple, 640);
}

TEST(Bound, MatchesClosedFormByHand) {
    const double p = 12, s = 0.7;
    const int m = 3;
    const double logm = std::log(5775.0);  // 12! / (4!^3) / 3!
    const double f = (p - 1) * std::log(1 + s * (1 - 1.0 / m) / (1 - 1.0 / p)) -
                     (m - 1) * std::log(1 + s * p / m);
    const auto r = sample_complexity_lower_bound({p, m, s, 0.1});
    EXPECT_EQ(r.status, BoundStatus::ok);
    EXPECT_NEAR(r.n_min, 2 * (0.9 * logm - 1) / f, 1e-10);
}

TEST(Bound, VacuousAndInapplicable) {
    // one factor: log M = 0, so the numerator is negative
    EXPECT_EQ(sample_complexity_lower_bound({10, 1, 1.0, 0.0}).status, BoundStatus::vacuous);
    // p = m: every assignment is the same structure
    EXPECT_EQ(sample_complexity_lower_bound({8, 8, 1.0, 0.0}).status, BoundStatus::vacuous);
    // (1 - eps) log M <= 1 with F > 0 reports the negative value unclamped
    const auto r = sample_complexity_lower_bound({4, 2, 1.0, 0.5});
    EXPECT_EQ(r.status, BoundStatus::vacuous);
    EXPECT_LT(r.n_min, 0.0);
    EXPECT_THROW(sample_complexity_lower_bound({10, 3, 1.0, 0.0}), ValidationError);
    EXPECT_THROW(sample_complexity_lower_bound({8, 2, 1.0, 1.0}), ValidationError);
}

TEST(Bound, InapplicableWhenMutualInformationRateIsNotPositive) {
    for (double s : {0.5, 5.0, 50.0}) {
        const double f = mutual_information_rate(4, 2, s);
        const auto r = sample_complexity_lower_bound_real({4, 2, s, 0.0});
        if (f > 0)
            EXPECT_NE(r.status, BoundStatus::inapplicable);
        else
            EXPECT_EQ(r.status, BoundStatus::inapplicable);
    }
}

TEST(Bound, DecreasingInDimension) {
    double prev = INFINITY;
    for (int p = 128; p <= 8192; p *= 2) {
        const double v = sample_complexity_lower_bound({double(p), 64, 0.1, 0.0}).n_min;
        EXPECT_LT(v, prev) << p;
        prev = v;
    }
}

TEST(Bound, DecreasingInSnr) {
    double prev = INFINITY;
    for (double s : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0}) {
        const double v = sample_complexity_lower_bound({1024, 64, s, 0.0}).n_min;
        EXPECT_LT(v, prev) << s;
        prev = v;
    }
}

TEST(Bound, ConvergesToAsymptoteFromAbove) {
    const double a = asymptotic_bound(64, 0.1, 0.0);
    double prev_gap = INFINITY;
    for (double p : {1e4, 1e5, 1e6}) {
        const double v = n_min(std::round(p / 64) * 64, 64, 0.1);
        EXPECT_GT(v, a);
        EXPECT_LT(v - a, prev_gap);
        prev_gap = v - a;
    }
    // the relative gap shrinks like (m - 1) log(s p / m) / (p log(1 + s))
    EXPECT_LT((n_min(64e6, 64, 0.1) - a) / a, 1e-3);
    EXPECT_LT((n_min(8e6, 8, 1.0, 0.2) - asymptotic_bound(8, 1.0, 0.2)) / asymptotic_bound(8, 1.0, 0.2),
              1e-3);
}

TEST(Asymptote, Values) {
    EXPECT_NEAR(asymptotic_bound(2, 1.0, 0.0), 2 * std::log(2.0) / std::log(1.5), 1e-12);
    EXPECT_NEAR(asymptotic_bound(2, 1.0, 0.0), 3.419, 1e-3);
    EXPECT_NEAR(asymptotic_bound(16, 0.3, 1.0 - 1e-15), 0.0, 1e-12);
    double prev = INFINITY;
    for (double s : {0.01, 0.1, 1.0, 10.0}) {
        EXPECT_LT(asymptotic_bound(16, s, 0.1), prev);
        prev = asymptotic_bound(16, s, 0.1);
    }
    EXPECT_THROW(asymptotic_bound(1, 1.0, 0.0), ValidationError);
}

TEST(MinRecoverableP, ExactBudgetReturnsThatDimension) {
    for (int p_star : {256, 640, 2048}) {
        const double budget = n_min(p_star, 64, 0.1);
        const auto rp = min_recoverable_p(budget, 64, 0.1, 0.0);
        ASSERT_TRUE(rp.reachable);
        EXPECT_EQ(rp.smallest_integer, p_star);
        EXPECT_EQ(rp.smallest_multiple, p_star);
        EXPECT_NEAR(rp.crossing, p_star, 1e-6 * p_star);
    }
}

TEST(MinRecoverableP, BudgetNearAsymptote) {
    const double a = asymptotic_bound(64, 0.1, 0.0);
    EXPECT_FALSE(min_recoverable_p(a * 0.99, 64, 0.1, 0.0).reachable);
    const auto far = min_recoverable_p(a * 1.01, 64, 0.1, 0.0);
    ASSERT_TRUE(far.reachable);
    EXPECT_GT(far.crossing, 1e5);
    EXPECT_EQ(far.smallest_multiple % 64, 0);
}
