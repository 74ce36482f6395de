#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "platformtrial/trial_model.hpp"

namespace pt_test {

using platformtrial::StageData;
using platformtrial::TrialData;

inline TrialData make_trial(std::vector<StageData> stages) { return TrialData{std::move(stages)}; }

/// Stage 1: T {1, 2}, P {0, 1}; stage 2: T {3}, P {2, 2}.
inline TrialData tiny_trial() { return make_trial({{{0.0, 1.0}, {1.0, 2.0}}, {{2.0, 2.0}, {3.0}}}); }

/// Arbitrary dataset with S stages and 2..max_n subjects per arm, drawn with
/// the standard library engine so it is independent of the library RNG.
inline TrialData random_trial(std::mt19937_64& gen, std::size_t stages, int max_n = 40) {
    std::uniform_int_distribution<int> size(2, max_n);
    std::uniform_real_distribution<double> loc(-5.0, 5.0);
    std::uniform_real_distribution<double> spread(0.2, 4.0);
    TrialData data;
    for (std::size_t s = 0; s < stages; ++s) {
        StageData st;
        const double mu = loc(gen);
        std::normal_distribution<double> p(mu, spread(gen));
        std::normal_distribution<double> t(mu + loc(gen) / 5.0, spread(gen));
        for (int i = size(gen); i > 0; --i) st.placebo.push_back(p(gen));
        for (int i = size(gen); i > 0; --i) st.treatment.push_back(t(gen));
        data.stages.push_back(std::move(st));
    }
    return data;
}

inline TrialData transformed(const TrialData& data, double scale, double shift) {
    TrialData out = data;
    for (auto& st : out.stages) {
        for (double& y : st.placebo) y = scale * y + shift;
        for (double& y : st.treatment) y = scale * y + shift;
    }
    return out;
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
        }
        std::swap(a[c], a[piv]);
        std::swap(b[c], b[piv]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t k = i + 1; k < n; ++k) acc -= a[i][k] * x[k];
        x[i] = acc / a[i][i];
    }
    return x;
}

struct RegressionOracle {
    std::vector<double> beta;
    double theta_var_factor = 0.0;  // (X^T W X)^{-1} at the treatment coefficient
    double weighted_rss = 0.0;
    std::int64_t n = 0;
};

/// Subject-level regression on intercept, stage dummies (stage 1 reference)
/// and a treatment indicator. `weight(s, treated)` gives each subject's weight.
template <class Weight>
RegressionOracle regression_oracle(const TrialData& data, Weight weight) {
    const std::size_t stages = data.stages.size();
    const std::size_t p = stages + 1;
    std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
    std::vector<double> xty(p, 0.0);
    std::vector<std::vector<double>> rows;
    std::vector<double> ys, ws;
    for (std::size_t s = 0; s < stages; ++s) {
        for (int treated = 0; treated < 2; ++treated) {
            const auto& ys_cell = treated ? data.stages[s].treatment : data.stages[s].placebo;
            for (double y : ys_cell) {
                std::vector<double> x(p, 0.0);
                x[0] = 1.0;
                if (s > 0) x[s] = 1.0;
                x[p - 1] = treated;
                rows.push_back(x);
                ys.push_back(y);
                ws.push_back(weight(s, treated == 1));
            }
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t a = 0; a < p; ++a) {
            xty[a] += ws[i] * rows[i][a] * ys[i];
            for (std::size_t b = 0; b < p; ++b) xtx[a][b] += ws[i] * rows[i][a] * rows[i][b];
        }
    }
    RegressionOracle out;
    out.beta = gauss_solve(xtx, xty);
    std::vector<double> unit(p, 0.0);
    unit[p - 1] = 1.0;
    out.theta_var_factor = gauss_solve(xtx, unit)[p - 1];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double fit = 0.0;
        for (std::size_t a = 0; a < p; ++a) fit += rows[i][a] * out.beta[a];
        out.weighted_rss += ws[i] * (ys[i] - fit) * (ys[i] - fit);
    }
    out.n = static_cast<std::int64_t>(rows.size());
    return out;
}

inline double rel_diff(double a, double b, double floor = 1.0) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace pt_test
