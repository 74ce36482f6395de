#pragma once

// Point estimators of the treatment effect and their one-sided inference.
// Everything here consumes per-cell sufficient statistics only.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "platformtrial/inference.hpp"
#include "platformtrial/stats_core.hpp"
#include "platformtrial/trial_model.hpp"
#include "platformtrial/weights.hpp"

namespace platformtrial {

enum class Method {
    direct,
    iptw,
    weighted_design,
    weighted_empirical,
    weighted_oracle,
    ols,
    wls_oracle,
    wls_practical,
    weighted_custom,
};

inline constexpr Method kSimulationMethods[] = {
    Method::direct,          Method::iptw, Method::weighted_design, Method::weighted_empirical,
    Method::weighted_oracle, Method::ols,  Method::wls_oracle,      Method::wls_practical,
};

inline std::string_view method_name(Method m) {
    switch (m) {
        case Method::direct: return "direct";
        case Method::iptw: return "iptw";
        case Method::weighted_design: return "weighted-design";
        case Method::weighted_empirical: return "weighted-empirical";
        case Method::weighted_oracle: return "weighted-oracle";
        case Method::ols: return "ols";
        case Method::wls_oracle: return "wls-oracle";
        case Method::wls_practical: return "wls-practical";
        case Method::weighted_custom: return "weighted-custom";
    }
    return "unknown";
}

inline std::optional<Method> parse_method(std::string_view name) {
    for (Method m : kSimulationMethods) {
        if (method_name(m) == name) return m;
    }
    return std::nullopt;
}

/// True when the method needs design knowledge (true or assumed variances).
inline bool needs_design(Method m) {
    return m == Method::weighted_design || m == Method::weighted_oracle || m == Method::wls_oracle;
}

/// Methods whose inference is a t-test.
inline bool is_t_based(Method m) { return m == Method::ols || m == Method::wls_practical; }

class SingularSystem : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateCell : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EstimateResult {
    Method method = Method::direct;
    double estimate = 0.0;
    double std_error = 0.0;
    double statistic = 0.0;  // z, or t for t-based methods
    double p_one_sided = 0.5;
    double ci_lower = 0.0;
    bool reject = false;
    std::optional<WeightVector> weights;
    std::optional<double> df;
};

namespace detail {

inline EstimateResult make_result(Method method, double estimate, double std_error,
                                  const TestOutcome& t) {
    EstimateResult r;
    r.method = method;
    r.estimate = estimate;
    r.std_error = std_error;
    r.statistic = t.statistic;
    r.p_one_sided = t.p_one_sided;
    r.ci_lower = *t.ci_lower;
    r.reject = t.reject;
    r.df = t.df;
    return r;
}

inline void require_nonempty_cells(const StageSummary& summary) {
    if (summary.stage_count() == 0) throw InsufficientData("no stages");
    for (std::size_t s = 0; s < summary.stage_count(); ++s) {
        const auto& c = summary.stage(s);
        if (c.placebo.n < 1 || c.treatment.n < 1) {
            throw InsufficientData("stage " + std::to_string(s + 1) + " has an empty arm");
        }
    }
}

}  // namespace detail

/// Pooled treatment mean minus pooled placebo mean, ignoring stages.
inline double direct_point_estimate(const StageSummary& summary) {
    detail::require_nonempty_cells(summary);
    return summary.pooled(Arm::treatment).mean() - summary.pooled(Arm::placebo).mean();
}

/// z-test with the pooled-arm sample variances.
inline EstimateResult direct_estimate(const StageSummary& summary, double alpha) {
    const double estimate = direct_point_estimate(summary);
    const SampleStats t = summary.pooled(Arm::treatment);
    const SampleStats p = summary.pooled(Arm::placebo);
    if (t.n < 2 || p.n < 2) {
        throw InsufficientData("insufficient data for variance: a pooled arm has n < 2");
    }
    const double se = std::sqrt(t.variance() / static_cast<double>(t.n) +
                                p.variance() / static_cast<double>(p.n));
    return detail::make_result(Method::direct, estimate, se, z_test(estimate, se, alpha));
}

/// w_s proportional to the stage's total enrollment.
inline WeightVector iptw_weights(const StageSummary& summary) {
    std::vector<double> totals(summary.stage_count());
    for (std::size_t s = 0; s < totals.size(); ++s) {
        const auto& c = summary.stage(s);
        totals[s] = static_cast<double>(c.placebo.n + c.treatment.n);
    }
    return normalized(std::move(totals), WeightProvenance::iptw);
}

inline double weighted_point_estimate(const StageSummary& summary, const WeightVector& w) {
    if (w.size() != summary.stage_count()) {
        throw DomainError("weight vector length does not match the number of stages");
    }
    double estimate = 0.0;
    for (std::size_t s = 0; s < w.size(); ++s) estimate += w[s] * summary.contrast(s);
    return estimate;
}

/// sum_s w_s k_s with standard error sqrt(sum_s w_s^2 v_s). `variances` are the
/// v_s matching the weights' provenance: true values for the oracle, estimates
/// otherwise.
inline EstimateResult weighted_estimate(const StageSummary& summary, const WeightVector& w,
                                        std::span<const double> variances, double alpha,
                                        Method method = Method::weighted_custom) {
    w.validate();
    const double estimate = weighted_point_estimate(summary, w);
    const double se = std::sqrt(w.combined_variance(variances));
    auto r = detail::make_result(method, estimate, se, z_test(estimate, se, alpha));
    r.weights = w;
    return r;
}

/// Inverse probability of treatment weighting: each treated outcome weighted by
/// (r_s + 1) / r_s and each control outcome by (r_s + 1), over the grand total.
/// Ratios are read off the observed arm sizes.
inline double iptw_point_estimate(const StageSummary& summary) {
    detail::require_nonempty_cells(summary);
    double treated = 0.0;
    double control = 0.0;
    double total = 0.0;
    for (const auto& c : summary.cells()) {
        const double ratio = static_cast<double>(c.treatment.n) / static_cast<double>(c.placebo.n);
        treated += c.treatment.sum * (ratio + 1.0) / ratio;
        control += c.placebo.sum * (ratio + 1.0);
        total += static_cast<double>(c.treatment.n + c.placebo.n);
    }
    return (treated - control) / total;
}

/// IPTW point estimate with the weighted-contrast z-test under the equivalent
/// enrollment-proportional weights and estimated v_s.
inline EstimateResult iptw_estimate(const StageSummary& summary, double alpha) {
    const double estimate = iptw_point_estimate(summary);
    const WeightVector w = iptw_weights(summary);
    const auto v = summary.contrast_variances();
    const double se = std::sqrt(w.combined_variance(v));
    auto r = detail::make_result(Method::iptw, estimate, se, z_test(estimate, se, alpha));
    r.weights = w;
    return r;
}

/// Optimal weights with every v_s replaced by its estimate.
inline WeightVector empirical_weights(const StageSummary& summary) {
    return optimal_weights(summary.contrast_variances(), WeightProvenance::empirical);
}

/// Optimal weights under a common variance for both arms of every stage, so that
/// v_s is proportional to 1/n_T + 1/n_P.
inline WeightVector design_weights(const Scenario& scenario) {
    std::vector<double> v;
    v.reserve(scenario.stages.size());
    for (const auto& st : scenario.stages) {
        v.push_back(1.0 / static_cast<double>(st.n_treatment()) +
                    1.0 / static_cast<double>(st.n_placebo));
    }
    return optimal_weights(v, WeightProvenance::design_assumed);
}

/// A per-cell quantity (standard deviation, precision, ...).
struct CellValues {
    double placebo = 0.0;
    double treatment = 0.0;
};
using CellSigmas = std::vector<CellValues>;

inline CellSigmas design_cell_sigmas(const Scenario& scenario) {
    CellSigmas out;
    out.reserve(scenario.stages.size());
    for (const auto& st : scenario.stages) out.push_back({st.sd_placebo, st.sd_treatment});
    return out;
}

/// Cell precisions b = n / sigma^2.
inline std::vector<CellValues> cell_precisions(const StageSummary& summary, const CellSigmas& sigmas) {
    if (sigmas.size() != summary.stage_count()) {
        throw DomainError("cell sigmas do not match the number of stages");
    }
    std::vector<CellValues> b(sigmas.size());
    for (std::size_t s = 0; s < b.size(); ++s) {
        const auto& c = summary.stage(s);
        if (!(sigmas[s].placebo > 0.0) || !(sigmas[s].treatment > 0.0)) {
            throw DomainError("cell sigmas must be positive");
        }
        b[s].placebo = static_cast<double>(c.placebo.n) / (sigmas[s].placebo * sigmas[s].placebo);
        b[s].treatment =
            static_cast<double>(c.treatment.n) / (sigmas[s].treatment * sigmas[s].treatment);
    }
    return b;
}

/// Least-squares fit of y = beta_0 + sum_{s>=2} gamma_s [stage = s] + theta [arm = T]
/// with per-cell observation weights, built from cell sums. Stage 1 and placebo
/// are the reference levels; the treatment coefficient is the last parameter.
struct RegressionFit {
    std::vector<double> coefficients;
    double theta_variance_factor = 0.0;  // (X^T W X)^{-1} at (theta, theta)

    [[nodiscard]] double theta() const { return coefficients.back(); }

    [[nodiscard]] double fitted(std::size_t stage, Arm arm) const {
        double value = coefficients[0];
        if (stage > 0) value += coefficients[stage];
        if (arm == Arm::treatment) value += coefficients.back();
        return value;
    }
};

namespace detail {

// In-place Cholesky of a row-major SPD matrix; lower factor overwrites `a`.
inline void cholesky(std::vector<double>& a, std::size_t p) {
    double scale = 0.0;
    for (std::size_t i = 0; i < p; ++i) scale = std::max(scale, std::fabs(a[i * p + i]));
    for (std::size_t j = 0; j < p; ++j) {
        double d = a[j * p + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
        if (!(d > 1e-13 * scale)) throw SingularSystem("normal equations are singular");
        const double l = std::sqrt(d);
        a[j * p + j] = l;
        for (std::size_t i = j + 1; i < p; ++i) {
            double x = a[i * p + j];
            for (std::size_t k = 0; k < j; ++k) x -= a[i * p + k] * a[j * p + k];
            a[i * p + j] = x / l;
        }
    }
}

inline std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t p,
                                          std::vector<double> b) {
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * p + k] * b[k];
        b[i] /= l[i * p + i];
    }
    for (std::size_t i = p; i-- > 0;) {
        for (std::size_t k = i + 1; k < p; ++k) b[i] -= l[k * p + i] * b[k];
        b[i] /= l[i * p + i];
    }
    return b;
}

}  // namespace detail

/// Solves the weighted normal equations. `cell_weight(s, arm)` is the
/// per-observation weight of cell (s, arm); OLS passes 1.
template <class CellWeight>
RegressionFit fit_regression(const StageSummary& summary, CellWeight cell_weight) {
    const std::size_t stages = summary.stage_count();
    const std::size_t p = stages + 1;
    const std::size_t theta_col = stages;
    std::vector<double> xtx(p * p, 0.0);
    std::vector<double> xty(p, 0.0);
    for (std::size_t s = 0; s < stages; ++s) {
        for (Arm arm : {Arm::placebo, Arm::treatment}) {
            const SampleStats& cell = summary.stage(s).arm(arm);
            if (cell.n == 0) continue;
            const double w = cell_weight(s, arm);
            const double nw = static_cast<double>(cell.n) * w;
            const double yw = cell.sum * w;
            // Active columns of this cell's design row.
            std::size_t cols[3];
            std::size_t k = 0;
            cols[k++] = 0;
            if (s > 0) cols[k++] = s;
            if (arm == Arm::treatment) cols[k++] = theta_col;
            for (std::size_t i = 0; i < k; ++i) {
                xty[cols[i]] += yw;
                for (std::size_t j = 0; j < k; ++j) xtx[cols[i] * p + cols[j]] += nw;
            }
        }
    }
    detail::cholesky(xtx, p);
    RegressionFit fit;
    fit.coefficients = detail::cholesky_solve(xtx, p, xty);
    std::vector<double> unit(p, 0.0);
    unit[theta_col] = 1.0;
    fit.theta_variance_factor = detail::cholesky_solve(xtx, p, std::move(unit))[theta_col];
    return fit;
}

/// Residual sum of squares of a fit, per cell: within-cell sum of squares plus
/// n times the squared gap between cell mean and fitted value.
inline double residual_sum_of_squares(const StageSummary& summary, const RegressionFit& fit) {
    double rss = 0.0;
    for (std::size_t s = 0; s < summary.stage_count(); ++s) {
        for (Arm arm : {Arm::placebo, Arm::treatment}) {
            const SampleStats& cell = summary.stage(s).arm(arm);
            if (cell.n == 0) continue;
            const double gap = cell.mean() - fit.fitted(s, arm);
            rss += cell.centered_sum_sq() + static_cast<double>(cell.n) * gap * gap;
        }
    }
    return rss;
}

inline std::int64_t total_subjects(const StageSummary& summary) {
    std::int64_t n = 0;
    for (const auto& c : summary.cells()) n += c.placebo.n + c.treatment.n;
    return n;
}

/// Ordinary least squares with homoskedastic residual variance and t inference
/// on n - S - 1 degrees of freedom.
inline EstimateResult ols_estimate(const StageSummary& summary, double alpha) {
    detail::require_nonempty_cells(summary);
    const auto n = total_subjects(summary);
    const auto params = static_cast<std::int64_t>(summary.stage_count()) + 1;
    if (n < params + 1) throw InsufficientData("ols needs at least S + 2 subjects");
    const RegressionFit fit = fit_regression(summary, [](std::size_t, Arm) { return 1.0; });
    const double df = static_cast<double>(n - params);
    const double sigma2 = residual_sum_of_squares(summary, fit) / df;
    const double se = std::sqrt(sigma2 * fit.theta_variance_factor);
    return detail::make_result(Method::ols, fit.theta(), se, t_test(fit.theta(), se, df, alpha));
}

/// Two-stage closed form of the precision-weighted regression coefficient,
/// written in the cell precisions B1 = b_{1,T}, B2 = b_{1,P}, B3 = b_{2,T},
/// B4 = b_{2,P}. Returns {estimate, (X^T W X)^{-1}_{theta,theta}}.
inline std::pair<double, double> wls_two_stage_closed_form(const StageSummary& summary,
                                                           const std::vector<CellValues>& b) {
    const double b1 = b[0].treatment, b2 = b[0].placebo, b3 = b[1].treatment, b4 = b[1].placebo;
    const double y1t = summary.stage(0).treatment.mean(), y1p = summary.stage(0).placebo.mean();
    const double y2t = summary.stage(1).treatment.mean(), y2p = summary.stage(1).placebo.mean();
    const double det = b1 * b2 * (b3 + b4) + b3 * b4 * (b1 + b2);
    if (!(det > 0.0)) throw SingularSystem("weighted normal equations are singular");
    const double row_intercept = -(b3 + b4) * b1;
    const double row_stage = b1 * b4 - b2 * b3;
    const double row_theta = (b1 + b2) * (b3 + b4);
    const double xty_intercept = b1 * y1t + b2 * y1p + b3 * y2t + b4 * y2p;
    const double xty_stage = b3 * y2t + b4 * y2p;
    const double xty_theta = b1 * y1t + b3 * y2t;
    const double estimate =
        (row_intercept * xty_intercept + row_stage * xty_stage + row_theta * xty_theta) / det;
    return {estimate, row_theta / det};
}

namespace detail {

inline std::pair<double, double> wls_fit(const StageSummary& summary, const CellSigmas& sigmas) {
    const auto b = cell_precisions(summary, sigmas);
    if (summary.stage_count() == 2) return wls_two_stage_closed_form(summary, b);
    const RegressionFit fit = fit_regression(summary, [&](std::size_t s, Arm arm) {
        const double sd = arm == Arm::placebo ? sigmas[s].placebo : sigmas[s].treatment;
        return 1.0 / (sd * sd);
    });
    return {fit.theta(), fit.theta_variance_factor};
}

}  // namespace detail

/// Weighted least squares with known cell standard deviations; z inference with
/// variance (X^T W X)^{-1}_{theta,theta}.
inline EstimateResult wls_oracle(const StageSummary& summary, const CellSigmas& sigmas,
                                 double alpha) {
    detail::require_nonempty_cells(summary);
    const auto [estimate, factor] = detail::wls_fit(summary, sigmas);
    const double se = std::sqrt(factor);
    return detail::make_result(Method::wls_oracle, estimate, se, z_test(estimate, se, alpha));
}

/// Three-step feasible WLS: OLS fit, cell variances as the mean squared OLS
/// residual within each cell, then WLS with those variances. t inference on
/// n - S - 1 degrees of freedom.
inline EstimateResult wls_practical(const StageSummary& summary, double alpha) {
    detail::require_nonempty_cells(summary);
    if (!summary.variance_deficient_cells().empty()) {
        throw InsufficientData("insufficient data for variance: wls-practical needs n >= 2 per cell");
    }
    const RegressionFit ols = fit_regression(summary, [](std::size_t, Arm) { return 1.0; });
    CellSigmas sigmas(summary.stage_count());
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
        for (Arm arm : {Arm::placebo, Arm::treatment}) {
            const SampleStats& cell = summary.stage(s).arm(arm);
            const double gap = cell.mean() - ols.fitted(s, arm);
            const double mean_sq_residual = cell.centered_sum_sq() / static_cast<double>(cell.n) + gap * gap;
            // Anything below a few ulps of the cell's magnitude is round-off of an exact fit.
            const double noise = 16.0 * std::numeric_limits<double>::epsilon() *
                                 std::max(std::fabs(cell.mean()), std::fabs(ols.fitted(s, arm)));
            if (!(mean_sq_residual > noise * noise)) {
                throw DegenerateCell("degenerate cell: stage " + std::to_string(s + 1) + " arm " +
                                     arm_label(arm) + " has zero residual variance");
            }
            (arm == Arm::placebo ? sigmas[s].placebo : sigmas[s].treatment) = std::sqrt(mean_sq_residual);
        }
    }
    const auto [estimate, factor] = detail::wls_fit(summary, sigmas);
    const double se = std::sqrt(factor);
    const double df = static_cast<double>(total_subjects(summary)) -
                      static_cast<double>(summary.stage_count() + 1);
    if (df < 1.0) throw InsufficientData("wls-practical needs at least S + 2 subjects");
    return detail::make_result(Method::wls_practical, estimate, se, t_test(estimate, se, df, alpha));
}

/// Design-derived quantities that some methods need. Built once per scenario.
struct DesignKnowledge {
    WeightVector assumed_weights;   // common-variance optimal weights
    WeightVector oracle_weights;    // optimal weights from the true variances
    std::vector<double> true_variances;
    CellSigmas sigmas;

    static DesignKnowledge from(const Scenario& scenario) {
        DesignKnowledge d;
        d.assumed_weights = design_weights(scenario);
        d.true_variances = design_contrast_variances(scenario);
        d.sigmas = design_cell_sigmas(scenario);
        bool positive = true;
        for (double v : d.true_variances) positive = positive && v > 0.0;
        // Zero-variance designs have no oracle weights; methods that need them
        // fail when invoked.
        if (positive) d.oracle_weights = optimal_weights(d.true_variances);
        return d;
    }
};

/// Dispatches one method on one summary.
inline EstimateResult estimate(Method method, const StageSummary& summary, double alpha,
                               const DesignKnowledge* design = nullptr) {
    if (needs_design(method) && design == nullptr) {
        throw InvalidDesign(std::string(method_name(method)) + " requires design information");
    }
    switch (method) {
        case Method::direct: return direct_estimate(summary, alpha);
        case Method::iptw: return iptw_estimate(summary, alpha);
        case Method::weighted_design:
            return weighted_estimate(summary, design->assumed_weights, summary.contrast_variances(),
                                     alpha, Method::weighted_design);
        case Method::weighted_empirical: {
            const auto v = summary.contrast_variances();
            return weighted_estimate(summary, optimal_weights(v, WeightProvenance::empirical), v, alpha,
                                     Method::weighted_empirical);
        }
        case Method::weighted_oracle:
            if (design->oracle_weights.weights.empty()) {
                throw DomainError("weighted-oracle: design has a zero true variance");
            }
            return weighted_estimate(summary, design->oracle_weights, design->true_variances, alpha,
                                     Method::weighted_oracle);
        case Method::ols: return ols_estimate(summary, alpha);
        case Method::wls_oracle: return wls_oracle(summary, design->sigmas, alpha);
        case Method::wls_practical: return wls_practical(summary, alpha);
        case Method::weighted_custom: break;
    }
    throw DomainError("weighted-custom needs explicit weights; call weighted_estimate");
}

}  // namespace platformtrial
