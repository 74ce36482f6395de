#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "platformtrial/stats_core.hpp"

namespace platformtrial {

enum class WeightProvenance { optimal_oracle, empirical, design_assumed, iptw, custom };

inline std::string_view provenance_name(WeightProvenance p) {
    switch (p) {
        case WeightProvenance::optimal_oracle: return "optimal-oracle";
        case WeightProvenance::empirical: return "empirical";
        case WeightProvenance::design_assumed: return "design-assumed";
        case WeightProvenance::iptw: return "iptw";
        case WeightProvenance::custom: return "custom";
    }
    return "unknown";
}

/// Stage weights in [0, 1] summing to one.
struct WeightVector {
    std::vector<double> weights;
    WeightProvenance provenance = WeightProvenance::custom;

    [[nodiscard]] std::size_t size() const noexcept { return weights.size(); }
    double operator[](std::size_t s) const { return weights[s]; }

    void validate() const {
        if (weights.empty()) throw DomainError("weight vector is empty");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0 && w <= 1.0)) throw DomainError("stage weights must lie in [0, 1]");
            total += w;
        }
        if (std::fabs(total - 1.0) > 1e-12) throw DomainError("stage weights must sum to 1");
    }

    /// Variance sum_s w_s^2 v_s of the weighted contrast average.
    [[nodiscard]] double combined_variance(std::span<const double> variances) const {
        if (variances.size() != weights.size()) {
            throw DomainError("weights and variances differ in length");
        }
        double total = 0.0;
        for (std::size_t s = 0; s < weights.size(); ++s) {
            total += weights[s] * weights[s] * variances[s];
        }
        return total;
    }
};

/// Divides by the sum so that accumulated round-off never breaks the
/// sum-to-one invariant.
inline WeightVector normalized(std::vector<double> raw, WeightProvenance provenance) {
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw DomainError("weights must have a positive finite total");
    }
    for (double& w : raw) w /= total;
    return {std::move(raw), provenance};
}

/// Inverse-variance weights, the minimizer of sum w_s^2 v_s subject to sum w_s = 1.
inline WeightVector optimal_weights(std::span<const double> variances,
                                    WeightProvenance provenance = WeightProvenance::optimal_oracle) {
    if (variances.empty()) throw DomainError("optimal_weights: no stages");
    std::vector<double> precision(variances.size());
    for (std::size_t s = 0; s < variances.size(); ++s) {
        if (!(variances[s] > 0.0) || !std::isfinite(variances[s])) {
            throw DomainError("optimal_weights: stage " + std::to_string(s + 1) +
                              " variance must be positive and finite");
        }
        precision[s] = 1.0 / variances[s];
    }
    return normalized(std::move(precision), provenance);
}

}  // namespace platformtrial
