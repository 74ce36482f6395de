#pragma once

// Trial designs, subject-level data under the stage-wise Normal model, and
// their per-cell sufficient statistics.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "platformtrial/stats_core.hpp"

namespace platformtrial {

class InvalidDesign : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A cell does not hold enough subjects for the requested quantity.
class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Arm { placebo, treatment };

inline const char* arm_label(Arm arm) { return arm == Arm::placebo ? "P" : "T"; }

struct StageDesign {
    double mu = 0.0;          // placebo mean
    double ratio = 1.0;       // treatment : placebo allocation
    std::int64_t n_placebo = 0;
    double sd_placebo = 0.0;
    double sd_treatment = 0.0;

    [[nodiscard]] std::int64_t n_treatment() const {
        return static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(n_placebo)));
    }

    friend bool operator==(const StageDesign&, const StageDesign&) = default;
};

struct Scenario {
    std::vector<StageDesign> stages;
    double theta = 0.0;
    double alpha = 0.05;

    [[nodiscard]] std::size_t stage_count() const noexcept { return stages.size(); }

    void validate() const {
        if (stages.empty()) throw InvalidDesign("scenario needs at least one stage");
        if (!(alpha > 0.0 && alpha < 0.5)) throw InvalidDesign("alpha must lie in (0, 0.5)");
        if (!std::isfinite(theta)) throw InvalidDesign("theta must be finite");
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const auto& st = stages[s];
            const std::string where = "stage " + std::to_string(s + 1) + ": ";
            if (!std::isfinite(st.mu)) throw InvalidDesign(where + "mu must be finite");
            if (!(st.ratio > 0.0) || !std::isfinite(st.ratio)) {
                throw InvalidDesign(where + "ratio must be positive");
            }
            if (st.n_placebo < 1) throw InvalidDesign(where + "n_placebo must be >= 1");
            if (st.n_treatment() < 1) throw InvalidDesign(where + "ratio * n_placebo rounds to 0");
            if (!(st.sd_placebo >= 0.0) || !(st.sd_treatment >= 0.0)) {
                throw InvalidDesign(where + "standard deviations must be >= 0");
            }
        }
    }

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

struct StageData {
    std::vector<double> placebo;
    std::vector<double> treatment;
};

struct TrialData {
    std::vector<StageData> stages;
};

struct StageCells {
    SampleStats placebo;
    SampleStats treatment;

    [[nodiscard]] const SampleStats& arm(Arm a) const noexcept {
        return a == Arm::placebo ? placebo : treatment;
    }
};

/// Sufficient statistics for every (stage, arm) cell.
class StageSummary {
public:
    StageSummary() = default;
    explicit StageSummary(std::vector<StageCells> cells) : cells_(std::move(cells)) {}

    [[nodiscard]] std::size_t stage_count() const noexcept { return cells_.size(); }
    [[nodiscard]] const std::vector<StageCells>& cells() const noexcept { return cells_; }
    [[nodiscard]] const StageCells& stage(std::size_t s) const { return cells_.at(s); }
    std::vector<StageCells>& mutable_cells() noexcept { return cells_; }

    /// Stage contrast k_s: treatment mean minus placebo mean.
    [[nodiscard]] double contrast(std::size_t s) const {
        const auto& c = cells_.at(s);
        if (c.placebo.n < 1 || c.treatment.n < 1) {
            throw InsufficientData("stage " + std::to_string(s + 1) + " has an empty arm");
        }
        return c.treatment.mean() - c.placebo.mean();
    }

    /// Estimated contrast variance s_T^2/n_T + s_P^2/n_P.
    [[nodiscard]] double contrast_variance(std::size_t s) const {
        const auto& c = cells_.at(s);
        for (Arm a : {Arm::treatment, Arm::placebo}) {
            if (c.arm(a).n < 2) {
                throw InsufficientData("insufficient data for variance: stage " +
                                       std::to_string(s + 1) + " arm " + arm_label(a) +
                                       " has n < 2");
            }
        }
        return c.treatment.variance() / static_cast<double>(c.treatment.n) +
               c.placebo.variance() / static_cast<double>(c.placebo.n);
    }

    [[nodiscard]] std::vector<double> contrasts() const {
        std::vector<double> k(cells_.size());
        for (std::size_t s = 0; s < k.size(); ++s) k[s] = contrast(s);
        return k;
    }

    [[nodiscard]] std::vector<double> contrast_variances() const {
        std::vector<double> v(cells_.size());
        for (std::size_t s = 0; s < v.size(); ++s) v[s] = contrast_variance(s);
        return v;
    }

    /// Cells with fewer than two subjects, as (stage index, arm) pairs.
    [[nodiscard]] std::vector<std::pair<std::size_t, Arm>> variance_deficient_cells() const {
        std::vector<std::pair<std::size_t, Arm>> out;
        for (std::size_t s = 0; s < cells_.size(); ++s) {
            if (cells_[s].placebo.n < 2) out.emplace_back(s, Arm::placebo);
            if (cells_[s].treatment.n < 2) out.emplace_back(s, Arm::treatment);
        }
        return out;
    }

    [[nodiscard]] SampleStats pooled(Arm a) const noexcept {
        SampleStats total;
        for (const auto& c : cells_) total.merge(c.arm(a));
        return total;
    }

private:
    std::vector<StageCells> cells_;
};

/// Draws one trial. Within a stage the placebo arm is drawn before the
/// treatment arm; stages are drawn in order.
inline TrialData generate_trial(const Scenario& scenario, RngStream& rng) {
    TrialData data;
    data.stages.reserve(scenario.stages.size());
    for (const auto& st : scenario.stages) {
        StageData sd;
        sd.placebo = sample_normal(rng, st.mu, st.sd_placebo, static_cast<std::size_t>(st.n_placebo));
        sd.treatment = sample_normal(rng, st.mu + scenario.theta, st.sd_treatment,
                                     static_cast<std::size_t>(st.n_treatment()));
        data.stages.push_back(std::move(sd));
    }
    return data;
}

inline StageSummary summarize(const TrialData& data) {
    std::vector<StageCells> cells;
    cells.reserve(data.stages.size());
    for (std::size_t s = 0; s < data.stages.size(); ++s) {
        const auto& st = data.stages[s];
        if (st.placebo.empty() || st.treatment.empty()) {
            throw InsufficientData("stage " + std::to_string(s + 1) + " has an empty arm");
        }
        cells.push_back({accumulate(st.placebo), accumulate(st.treatment)});
    }
    return StageSummary(std::move(cells));
}

/// Same draws and accumulation order as summarize(generate_trial(...)), without
/// materializing subject vectors. The simulator's hot path.
inline void generate_summary_into(const Scenario& scenario, RngStream& rng, StageSummary& out) {
    auto& cells = out.mutable_cells();
    cells.resize(scenario.stages.size());
    for (std::size_t s = 0; s < scenario.stages.size(); ++s) {
        const auto& st = scenario.stages[s];
        StageCells c;
        for (std::int64_t i = 0; i < st.n_placebo; ++i) {
            c.placebo.add(st.mu + st.sd_placebo * rng.next_standard_normal());
        }
        const double mu_t = st.mu + scenario.theta;
        const std::int64_t n_t = st.n_treatment();
        for (std::int64_t i = 0; i < n_t; ++i) {
            c.treatment.add(mu_t + st.sd_treatment * rng.next_standard_normal());
        }
        cells[s] = c;
    }
}

inline StageSummary generate_summary(const Scenario& scenario, RngStream& rng) {
    StageSummary out;
    generate_summary_into(scenario, rng, out);
    return out;
}

/// True contrast variances sigma_T^2/n_T + sigma_P^2/n_P of a design.
inline std::vector<double> design_contrast_variances(const Scenario& scenario) {
    std::vector<double> v;
    v.reserve(scenario.stages.size());
    for (const auto& st : scenario.stages) {
        v.push_back(st.sd_treatment * st.sd_treatment / static_cast<double>(st.n_treatment()) +
                    st.sd_placebo * st.sd_placebo / static_cast<double>(st.n_placebo));
    }
    return v;
}

/// One period of a case-study platform: uniform enrollment shared among the
/// placebo arm and `active_drug_count` active arms.
struct CaseStudyStage {
    double duration_months = 0.0;
    double enrollment_rate = 0.0;
    std::int64_t active_drug_count = 1;
    double mu = 0.0;
    double sd_placebo = 0.0;
    double sd_treatment = 0.0;

    [[nodiscard]] double total_patients() const { return duration_months * enrollment_rate; }
    [[nodiscard]] double ratio() const {
        return 1.0 / std::sqrt(static_cast<double>(active_drug_count));
    }
};

/// Stage s enrolls N_s patients; N_s / (1 + sqrt(k_s)) go to placebo (rounded
/// to the nearest integer) and the treatment arm gets round(n_P / sqrt(k_s)).
inline Scenario build_case_study(const std::vector<CaseStudyStage>& stages, double theta,
                                 double alpha) {
    if (stages.empty()) throw InvalidDesign("case study needs at least one stage");
    Scenario sc;
    sc.theta = theta;
    sc.alpha = alpha;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& cs = stages[s];
        const std::string where = "case-study stage " + std::to_string(s + 1) + ": ";
        if (!(cs.duration_months > 0.0) || !(cs.enrollment_rate > 0.0)) {
            throw InvalidDesign(where + "duration and enrollment rate must be positive");
        }
        if (cs.active_drug_count < 1) throw InvalidDesign(where + "active_drug_count must be >= 1");
        const double root_k = std::sqrt(static_cast<double>(cs.active_drug_count));
        StageDesign st;
        st.mu = cs.mu;
        st.ratio = cs.ratio();
        st.n_placebo = static_cast<std::int64_t>(std::llround(cs.total_patients() / (1.0 + root_k)));
        st.sd_placebo = cs.sd_placebo;
        st.sd_treatment = cs.sd_treatment;
        if (st.n_placebo < 1 || st.n_treatment() < 1) {
            throw InvalidDesign(where + "rounded arm size is 0");
        }
        sc.stages.push_back(st);
    }
    sc.validate();
    return sc;
}

}  // namespace platformtrial
