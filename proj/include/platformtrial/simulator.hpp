#pragma once

// Monte Carlo operating characteristics and the estimation/testing coherence
// scan. Iteration i always uses RngStream(seed, i); partial sums are formed
// per fixed-size chunk and reduced in chunk order, so results do not depend on
// the number of worker threads.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "platformtrial/estimators.hpp"
#include "platformtrial/inference.hpp"
#include "platformtrial/stats_core.hpp"
#include "platformtrial/trial_model.hpp"

namespace platformtrial {

struct MetricsRow {
    std::string scenario_id;
    Method method = Method::direct;
    double theta = 0.0;
    double bias = 0.0;
    double mse = 0.0;
    double rejection_rate = 0.0;
    double ci_positive_rate = 0.0;  // fraction of iterations with ci_lower > 0
    std::int64_t n_iterations = 0;
    double mc_se_bias = 0.0;
    double mc_se_rate = 0.0;
    double wall_time_seconds = 0.0;
};

struct SimulationOptions {
    std::int64_t n_iter = 1'000'000;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::int64_t chunk_size = 4096;
};

/// An estimator failed on one iteration; the run is abandoned rather than
/// silently skipping the draw.
class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, std::uint64_t seed, std::uint64_t stream_id)
        : std::runtime_error(what), seed_(seed), stream_id_(stream_id) {}
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
};

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x)) {
            compensation_ += (sum_ - t) + x;
        } else {
            compensation_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    [[nodiscard]] double value() const noexcept { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

namespace detail {

struct MethodPartial {
    CompensatedSum error;
    CompensatedSum squared_error;
    std::int64_t rejections = 0;
    std::int64_t ci_positive = 0;
};

struct ChunkResult {
    std::vector<MethodPartial> per_method;
    std::optional<std::uint64_t> failed_stream;
    std::string failure;
};

/// Runs chunks [0, n_chunks) on `workers` threads; `body(chunk)` must only
/// touch state owned by that chunk.
template <class Body>
void for_each_chunk(std::int64_t n_chunks, unsigned workers, Body body) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_chunks)));
    std::atomic<std::int64_t> next{0};
    auto drain = [&] {
        for (std::int64_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) {
            if (!body(c)) next.store(n_chunks);
        }
    };
    if (workers == 1) {
        drain();
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(drain);
}

}  // namespace detail

/// Operating characteristics of every method in `methods` on `scenario`. All
/// methods in one iteration see the same simulated trial.
inline std::vector<MetricsRow> run_scenario(const std::string& scenario_id, const Scenario& scenario,
                                            std::span<const Method> methods,
                                            const SimulationOptions& options) {
    scenario.validate();
    if (options.n_iter < 1) throw DomainError("n_iter must be >= 1");
    if (options.chunk_size < 1) throw DomainError("chunk_size must be >= 1");
    if (methods.empty()) throw DomainError("no methods requested");
    const auto start = std::chrono::steady_clock::now();
    const DesignKnowledge design = DesignKnowledge::from(scenario);
    const std::int64_t n_chunks = (options.n_iter + options.chunk_size - 1) / options.chunk_size;
    std::vector<detail::ChunkResult> chunks(static_cast<std::size_t>(n_chunks));

    detail::for_each_chunk(n_chunks, options.workers, [&](std::int64_t c) {
        auto& out = chunks[static_cast<std::size_t>(c)];
        out.per_method.assign(methods.size(), {});
        const std::int64_t begin = c * options.chunk_size;
        const std::int64_t end = std::min(options.n_iter, begin + options.chunk_size);
        StageSummary summary;
        for (std::int64_t i = begin; i < end; ++i) {
            const auto stream = static_cast<std::uint64_t>(i);
            RngStream rng(options.seed, stream);
            generate_summary_into(scenario, rng, summary);
            for (std::size_t m = 0; m < methods.size(); ++m) {
                EstimateResult r;
                try {
                    r = estimate(methods[m], summary, scenario.alpha, &design);
                } catch (const std::exception& e) {
                    out.failed_stream = stream;
                    out.failure = std::string(method_name(methods[m])) + ": " + e.what();
                    return false;
                }
                auto& acc = out.per_method[m];
                const double err = r.estimate - scenario.theta;
                acc.error.add(err);
                acc.squared_error.add(err * err);
                acc.rejections += r.reject ? 1 : 0;
                acc.ci_positive += r.ci_lower > 0.0 ? 1 : 0;
            }
        }
        return true;
    });

    std::optional<std::uint64_t> first_failure;
    std::string failure;
    for (const auto& ch : chunks) {
        if (ch.failed_stream && (!first_failure || *ch.failed_stream < *first_failure)) {
            first_failure = ch.failed_stream;
            failure = ch.failure;
        }
    }
    if (first_failure) {
        throw SimulationError("scenario " + scenario_id + ", seed " + std::to_string(options.seed) +
                                  ", stream " + std::to_string(*first_failure) + ": " + failure,
                              options.seed, *first_failure);
    }

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto n = static_cast<double>(options.n_iter);
    std::vector<MetricsRow> rows;
    rows.reserve(methods.size());
    for (std::size_t m = 0; m < methods.size(); ++m) {
        CompensatedSum err, sq;
        std::int64_t rejections = 0, ci_positive = 0;
        for (const auto& ch : chunks) {
            err.add(ch.per_method[m].error.value());
            sq.add(ch.per_method[m].squared_error.value());
            rejections += ch.per_method[m].rejections;
            ci_positive += ch.per_method[m].ci_positive;
        }
        MetricsRow row;
        row.scenario_id = scenario_id;
        row.method = methods[m];
        row.theta = scenario.theta;
        row.bias = err.value() / n;
        row.mse = sq.value() / n;
        row.rejection_rate = static_cast<double>(rejections) / n;
        row.ci_positive_rate = static_cast<double>(ci_positive) / n;
        row.n_iterations = options.n_iter;
        const double spread = options.n_iter > 1
                                  ? std::max(row.mse - row.bias * row.bias, 0.0) * n / (n - 1.0)
                                  : 0.0;
        row.mc_se_bias = std::sqrt(spread / n);
        row.mc_se_rate = std::sqrt(row.rejection_rate * (1.0 - row.rejection_rate) / n);
        row.wall_time_seconds = elapsed;
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Across-round mean and standard deviation of each metric.
struct RoundSummary {
    std::string scenario_id;
    Method method = Method::direct;
    double theta = 0.0;
    std::size_t rounds = 0;
    double mean_bias = 0.0, se_bias = 0.0;
    double mean_mse = 0.0, se_mse = 0.0;
    double mean_rate = 0.0, se_rate = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_and_sd(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace detail

/// `rounds[r]` holds the rows of round r in a common layout.
inline std::vector<RoundSummary> mc_standard_errors(const std::vector<std::vector<MetricsRow>>& rounds) {
    if (rounds.size() < 2) throw DomainError("mc_standard_errors needs at least two rounds");
    const std::size_t width = rounds.front().size();
    for (const auto& r : rounds) {
        if (r.size() != width) throw DomainError("rounds have different row layouts");
    }
    std::vector<RoundSummary> out;
    for (std::size_t i = 0; i < width; ++i) {
        const MetricsRow& key = rounds.front()[i];
        std::vector<double> bias, mse, rate;
        for (const auto& r : rounds) {
            const MetricsRow& row = r[i];
            if (row.scenario_id != key.scenario_id || row.method != key.method || row.theta != key.theta) {
                throw DomainError("rounds have different row layouts");
            }
            bias.push_back(row.bias);
            mse.push_back(row.mse);
            rate.push_back(row.rejection_rate);
        }
        RoundSummary s;
        s.scenario_id = key.scenario_id;
        s.method = key.method;
        s.theta = key.theta;
        s.rounds = rounds.size();
        std::tie(s.mean_bias, s.se_bias) = detail::mean_and_sd(bias);
        std::tie(s.mean_mse, s.se_mse) = detail::mean_and_sd(mse);
        std::tie(s.mean_rate, s.se_rate) = detail::mean_and_sd(rate);
        out.push_back(std::move(s));
    }
    return out;
}

/// Round r runs with seed `options.seed + r`.
inline std::vector<std::vector<MetricsRow>> run_rounds(const std::string& scenario_id,
                                                       const Scenario& scenario,
                                                       std::span<const Method> methods,
                                                       SimulationOptions options, std::size_t rounds) {
    std::vector<std::vector<MetricsRow>> out;
    const std::uint64_t base = options.seed;
    for (std::size_t r = 0; r < rounds; ++r) {
        options.seed = base + r;
        out.push_back(run_scenario(scenario_id, scenario, methods, options));
    }
    return out;
}

enum class Framework { weighted, combination };

inline std::string_view framework_name(Framework f) {
    return f == Framework::weighted ? "weighted" : "combination";
}

enum class CoherenceClass { both_consistent, estimation_only, testing_only };

inline std::string_view coherence_class_name(CoherenceClass c) {
    switch (c) {
        case CoherenceClass::both_consistent: return "consistent";
        case CoherenceClass::estimation_only: return "estimation_only";
        case CoherenceClass::testing_only: return "testing_only";
    }
    return "unknown";
}

struct CoherencePoint {
    std::uint64_t stream_id = 0;
    double z1 = 0.0;
    double z2 = 0.0;
    CoherenceClass cls = CoherenceClass::both_consistent;
};

struct CoherenceCounts {
    std::int64_t both_consistent = 0;
    std::int64_t estimation_only = 0;
    std::int64_t testing_only = 0;
    std::vector<CoherencePoint> points;

    [[nodiscard]] std::int64_t inconsistent() const noexcept { return estimation_only + testing_only; }
    [[nodiscard]] std::int64_t total() const noexcept {
        return both_consistent + estimation_only + testing_only;
    }
};

/// Classifies each simulated two-stage trial by whether the weighted
/// estimator's lower confidence bound (weight w_tilde on stage 1) and the
/// chosen test agree on a positive finding.
inline CoherenceCounts coherence_scan(const Scenario& scenario, double w_tilde, Framework framework,
                                      std::int64_t n_iter, std::uint64_t seed) {
    scenario.validate();
    if (scenario.stage_count() != 2) {
        throw InvalidDesign("coherence scan supports two-stage scenarios only");
    }
    if (n_iter < 1) throw DomainError("n_iter must be >= 1");
    const WeightVector w = normalized({w_tilde, 1.0 - w_tilde}, WeightProvenance::custom);
    w.validate();
    CoherenceCounts counts;
    counts.points.reserve(static_cast<std::size_t>(n_iter));
    StageSummary summary;
    for (std::int64_t i = 0; i < n_iter; ++i) {
        const auto stream = static_cast<std::uint64_t>(i);
        RngStream rng(seed, stream);
        generate_summary_into(scenario, rng, summary);
        const auto v = summary.contrast_variances();
        const EstimateResult est = weighted_estimate(summary, w, v, scenario.alpha);
        const bool estimation_positive = est.ci_lower > 0.0;
        CoherencePoint pt;
        pt.stream_id = stream;
        pt.z1 = summary.contrast(0) / std::sqrt(v[0]);
        pt.z2 = summary.contrast(1) / std::sqrt(v[1]);
        bool testing_positive = est.reject;
        if (framework == Framework::combination) {
            const StagePValues pv{normal_upper_tail(pt.z1), normal_upper_tail(pt.z2), w_tilde};
            testing_positive = combination_test(pv, scenario.alpha).reject;
        }
        if (estimation_positive == testing_positive) {
            pt.cls = CoherenceClass::both_consistent;
            ++counts.both_consistent;
        } else if (estimation_positive) {
            pt.cls = CoherenceClass::estimation_only;
            ++counts.estimation_only;
        } else {
            pt.cls = CoherenceClass::testing_only;
            ++counts.testing_only;
        }
        counts.points.push_back(pt);
    }
    return counts;
}

}  // namespace platformtrial
