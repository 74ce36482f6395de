#pragma once

// One-sided tests and lower confidence bounds, the stage-wise p-value
// combination test, and closed-form planned power / sample size.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "platformtrial/stats_core.hpp"
#include "platformtrial/trial_model.hpp"
#include "platformtrial/weights.hpp"

namespace platformtrial {

/// Result of a one-sided test of H0: theta <= 0 against theta > 0.
///
/// For z and t outcomes, `reject`, `p_one_sided < alpha`, and `*ci_lower > 0`
/// are equivalent on every input, including ties at the critical value.
struct TestOutcome {
    double statistic = 0.0;
    double p_one_sided = 0.5;
    std::optional<double> ci_lower;  // absent for the combination test
    bool reject = false;
    double alpha = 0.05;
    std::optional<double> df;
};

namespace detail {

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("alpha must lie in (0, 0.5)");
}

// Single decision shared by the statistic, the p-value and the bound. The
// p-value is snapped onto the correct side of alpha when the tail function and
// the quantile disagree by rounding at the boundary.
template <class UpperTail>
TestOutcome decide(double estimate, double std_error, double critical, double alpha,
                   UpperTail upper_tail) {
    TestOutcome out;
    out.alpha = alpha;
    if (!std::isfinite(estimate)) throw DomainError("estimate must be finite");
    if (!(std_error >= 0.0) || !std::isfinite(std_error)) {
        throw DomainError("standard error must be finite and >= 0");
    }
    if (std_error == 0.0) {
        // Point mass: the bound collapses onto the estimate.
        out.statistic = estimate > 0.0 ? HUGE_VAL : (estimate < 0.0 ? -HUGE_VAL : 0.0);
        out.reject = estimate > 0.0;
        out.ci_lower = estimate;
        out.p_one_sided = estimate > 0.0 ? 0.0 : (estimate < 0.0 ? 1.0 : 0.5);
        return out;
    }
    const double stat = estimate / std_error;
    out.statistic = stat;
    out.reject = stat > critical;
    out.ci_lower = std_error * (stat - critical);
    double p = upper_tail(stat);
    if (out.reject && !(p < alpha)) p = std::nextafter(alpha, 0.0);
    if (!out.reject && p < alpha) p = alpha;
    out.p_one_sided = p;
    return out;
}

}  // namespace detail

inline double normal_critical_value(double alpha) { return normal_quantile(1.0 - alpha); }

inline TestOutcome z_test(double estimate, double std_error, double alpha) {
    detail::check_alpha(alpha);
    return detail::decide(estimate, std_error, normal_critical_value(alpha), alpha,
                          [](double z) { return normal_upper_tail(z); });
}

/// Upper 1 - alpha Student-t quantile, memoized per thread because the
/// simulator asks for the same (df, alpha) millions of times.
inline double t_critical_value(double df, double alpha) {
    thread_local double cached_df = -1.0;
    thread_local double cached_alpha = -1.0;
    thread_local double cached_q = 0.0;
    if (df != cached_df || alpha != cached_alpha) {
        cached_q = t_quantile(1.0 - alpha, df);
        cached_df = df;
        cached_alpha = alpha;
    }
    return cached_q;
}

inline TestOutcome t_test(double estimate, double std_error, double df, double alpha) {
    detail::check_alpha(alpha);
    if (!(df >= 1.0)) throw DomainError("t_test: df must be >= 1");
    auto out = detail::decide(estimate, std_error, t_critical_value(df, alpha), alpha,
                              [df](double t) { return t_upper_tail(t, df); });
    out.df = df;
    return out;
}

/// One-sided stage-wise p-values 1 - Phi(k_s / sqrt(v_hat_s)).
inline std::vector<double> stage_p_values(const StageSummary& summary) {
    std::vector<double> p(summary.stage_count());
    for (std::size_t s = 0; s < p.size(); ++s) {
        const double v = summary.contrast_variance(s);
        if (!(v > 0.0)) {
            throw InsufficientData("stage " + std::to_string(s + 1) +
                                   " has zero estimated contrast variance");
        }
        p[s] = normal_upper_tail(summary.contrast(s) / std::sqrt(v));
    }
    return p;
}

struct StagePValues {
    double p1 = 0.5;
    double p2 = 0.5;
    double w_tilde = 0.5;  // first-stage weight; the normal scores get sqrt(w) and sqrt(1 - w)
};

/// Weighted inverse-normal combination of two stage-wise p-values. Supplies no
/// confidence bound.
inline TestOutcome combination_test(const StagePValues& pv, double alpha) {
    detail::check_alpha(alpha);
    for (double p : {pv.p1, pv.p2}) {
        if (!(p > 0.0 && p < 1.0)) throw DomainError("stage p-values must lie in (0, 1)");
    }
    if (!(pv.w_tilde >= 0.0 && pv.w_tilde <= 1.0)) throw DomainError("w_tilde must lie in [0, 1]");
    // Phi^{-1}(1 - p) written as -Phi^{-1}(p) to keep precision for small p.
    const double z = std::sqrt(pv.w_tilde) * -normal_quantile(pv.p1) +
                     std::sqrt(1.0 - pv.w_tilde) * -normal_quantile(pv.p2);
    TestOutcome out;
    out.alpha = alpha;
    out.statistic = z;
    out.p_one_sided = normal_upper_tail(z);
    out.reject = out.p_one_sided < alpha;
    return out;
}

/// Power of the weighted z-test at effect theta under the Normal approximation.
inline double planned_power(double theta, double alpha, const WeightVector& weights,
                            std::span<const double> true_variances) {
    detail::check_alpha(alpha);
    weights.validate();
    const double se = std::sqrt(weights.combined_variance(true_variances));
    if (!(se > 0.0)) throw DomainError("planned_power: design has zero variance");
    return normal_cdf(theta / se - normal_critical_value(alpha));
}

inline double planned_power(const Scenario& scenario, const WeightVector& weights,
                            std::span<const double> true_variances) {
    return planned_power(scenario.theta, scenario.alpha, weights, true_variances);
}

class UnreachableTarget : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Planned power with optimal weights when every arm size of `design` is
/// multiplied by `multiplier` (real-valued arm sizes, ratios held).
inline double scaled_planned_power(const Scenario& design, double multiplier, double theta,
                                   double alpha) {
    auto v = design_contrast_variances(design);
    for (double& x : v) x /= multiplier;
    return planned_power(theta, alpha, optimal_weights(v), v);
}

/// Smallest common multiplier m on all arm sizes whose optimal-weight planned
/// power reaches `target_power`. Bisection runs far below one subject of the
/// largest arm; the returned m always satisfies the target.
inline double solve_sample_size(const Scenario& design, double target_power, double theta,
                                double alpha) {
    design.validate();
    if (!(target_power > 0.0 && target_power < 1.0)) {
        throw DomainError("target power must lie in (0, 1)");
    }
    if (!(theta > 0.0)) throw DomainError("sample size needs theta > 0");
    if (!(target_power > alpha)) {
        throw UnreachableTarget("target power must exceed alpha; any design attains it");
    }
    double lo = 0.0;
    double hi = 1.0;
    constexpr double kMaxMultiplier = 1e9;
    while (scaled_planned_power(design, hi, theta, alpha) < target_power) {
        lo = hi;
        hi *= 2.0;
        if (hi > kMaxMultiplier) throw UnreachableTarget("target power is unreachable");
    }
    for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (scaled_planned_power(design, mid, theta, alpha) >= target_power) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

}  // namespace platformtrial
