#pragma once

// Information-theoretic lower bound on the samples needed to recover the
// structure of an equal-groups NGLF model, from Fano's inequality over the
// ensemble of all partitions of p variables into m groups of size p/m.
//
// All logarithms are natural.

#include <cmath>
#include <optional>
#include <string>

#include "nglf/errors.hpp"

namespace nglf::bounds {

struct BoundParams {
    double p = 0;    // variable count; may be real-valued when scanning for crossings
    int m = 0;
    double snr = 0;
    double err = 0;  // target error probability in [0, 1)

    void validate() const {
        if (m < 1) throw ValidationError("m must be >= 1");
        if (p < m) throw ValidationError("p must be >= m");
        if (!(snr > 0.0)) throw ValidationError("snr must be positive");
        if (!(err >= 0.0 && err < 1.0)) throw ValidationError("err must lie in [0, 1)");
    }
};

enum class BoundStatus {
    ok,          // n_min > 0
    vacuous,     // numerator <= 0: every n is allowed
    inapplicable // F <= 0: the mutual-information bound gives nothing
};

inline const char* to_string(BoundStatus s) {
    switch (s) {
        case BoundStatus::ok: return "ok";
        case BoundStatus::vacuous: return "vacuous";
        case BoundStatus::inapplicable: return "inapplicable";
    }
    return "?";
}

struct BoundResult {
    double n_min = 0.0;  // meaningful unless status == inapplicable
    BoundStatus status = BoundStatus::ok;
};

/// log M with M = p! / ((p/m)!)^m / m!, via log-gamma. Accepts real p for scans.
inline double log_num_structures_real(double p, int m) {
    return std::lgamma(p + 1.0) - m * std::lgamma(p / m + 1.0) - std::lgamma(m + 1.0);
}

inline double log_num_structures(int p, int m) {
    if (m < 1 || p < m || p % m != 0)
        throw ValidationError("log_num_structures needs m dividing p (p=" + std::to_string(p) +
                              ", m=" + std::to_string(m) + ")");
    return log_num_structures_real(p, m);
}

/// F = log det(mean covariance) - mean log det(covariance), per unit noise.
inline double mutual_information_rate(double p, int m, double snr) {
    return (p - 1.0) * std::log1p(snr * (1.0 - 1.0 / m) / (1.0 - 1.0 / p)) -
           (m - 1.0) * std::log1p(snr * p / m);
}

inline BoundResult sample_complexity_lower_bound_real(const BoundParams& bp) {
    bp.validate();
    const double numer = 2.0 * ((1.0 - bp.err) * log_num_structures_real(bp.p, bp.m) - 1.0);
    const double f = bp.p > 1.0 ? mutual_information_rate(bp.p, bp.m, bp.snr) : 0.0;
    // A non-positive numerator rules nothing out whatever F is (m = 1, p = m).
    // n_min is left unclamped when F > 0 and is 0 otherwise.
    if (!(numer > 0.0)) return {f > 0.0 ? numer / f : 0.0, BoundStatus::vacuous};
    if (!(f > 0.0)) return {0.0, BoundStatus::inapplicable};
    return {numer / f, BoundStatus::ok};
}

/// Smallest n for which structure recovery with error probability `err` is not ruled out.
inline BoundResult sample_complexity_lower_bound(const BoundParams& bp) {
    bp.validate();
    const double pi = std::round(bp.p);
    if (pi != bp.p || static_cast<long long>(pi) % bp.m != 0)
        throw ValidationError("equal-groups ensemble needs integer p divisible by m");
    return sample_complexity_lower_bound_real(bp);
}

/// Large-p limit 2 (1 - err) log m / log(1 + s (1 - 1/m)).
inline double asymptotic_bound(int m, double snr, double err) {
    if (m < 2) throw ValidationError("asymptotic bound needs m >= 2");
    if (!(snr > 0.0)) throw ValidationError("snr must be positive");
    return 2.0 * (1.0 - err) * std::log(static_cast<double>(m)) /
           std::log1p(snr * (1.0 - 1.0 / m));
}

struct RecoverableP {
    bool reachable = false;
    double crossing = 0.0;          // real-valued p where n_min(p) = n
    long long smallest_integer = 0; // smallest integer p with n_min(p) <= n
    long long smallest_multiple = 0;// smallest multiple of m with n_min(p) <= n
};

/// Smallest dimension at which a budget of n samples is not ruled out.
///
/// Uses the real-valued extension of the bound (log-gamma in p). The forbidden
/// region of the blessing-of-dimensionality plot ends at `crossing`; the
/// experiment marks floor(crossing) as its threshold.
inline RecoverableP min_recoverable_p(double n, int m, double snr, double err,
                                      double p_max = 1e15) {
    if (m < 2) throw ValidationError("min_recoverable_p needs m >= 2");
    RecoverableP out;
    if (!(n > asymptotic_bound(m, snr, err))) return out;

    // Only the informative branch counts: a vacuous bound at tiny p (log M too small)
    // says nothing about recoverability.
    auto ok = [&](double p) {
        const BoundResult r = sample_complexity_lower_bound_real({p, m, snr, err});
        return r.status == BoundStatus::ok && r.n_min <= n;
    };

    // n_min is decreasing in p once F > 0; bracket by doubling then bisect.
    double lo = m;
    if (ok(lo)) {
        out.reachable = true;
        out.crossing = lo;
    } else {
        double hi = 2.0 * m;
        while (!ok(hi)) {
            lo = hi;
            hi *= 2.0;
            if (hi > p_max) return out;
        }
        for (int it = 0; it < 200 && hi - lo > 1e-9 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (ok(mid) ? hi : lo) = mid;
        }
        out.reachable = true;
        out.crossing = hi;
    }

    long long pi = std::max<long long>(m, static_cast<long long>(std::floor(out.crossing)));
    while (pi > m && ok(static_cast<double>(pi - 1))) --pi;
    while (!ok(static_cast<double>(pi))) ++pi;
    out.smallest_integer = pi;

    long long pm = ((pi + m - 1) / m) * m;
    while (!ok(static_cast<double>(pm))) pm += m;
    out.smallest_multiple = pm;
    return out;
}

}  // namespace nglf::bounds
