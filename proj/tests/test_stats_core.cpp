#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "platformtrial/stats_core.hpp"

using namespace platformtrial;

namespace {

// Student-t CDF by composite Simpson integration of the density from 0.
double t_cdf_by_quadrature(double x, double df) {
    const double log_c = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                         0.5 * std::log(df * M_PI);
    auto density = [&](double t) { return std::exp(log_c - (df + 1.0) / 2.0 * std::log1p(t * t / df)); };
    const int n = 20000;
    const double h = x / n;
    double acc = density(0.0) + density(x);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * density(i * h);
    return 0.5 + acc * h / 3.0;
}

}  // namespace

TEST(NormalDistribution, CdfMatchesHighPrecisionValues) {
    EXPECT_NEAR(normal_cdf(1.6448536269514722), 0.94999999999999994690, 1e-15);
    EXPECT_NEAR(normal_cdf(2.3262), 0.98999605816207968538, 1e-15);
    EXPECT_NEAR(normal_cdf(1.0), 0.84134474606854294859, 1e-15);
    EXPECT_NEAR(normal_cdf(-3.0) / 0.0013498980316300945, 1.0, 1e-14);
    EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
}

TEST(NormalDistribution, UpperTailKeepsRelativePrecisionFarOut) {
    EXPECT_NEAR(normal_upper_tail(3.0) / 0.0013498980316300945, 1.0, 1e-14);
    EXPECT_GT(normal_upper_tail(30.0), 0.0);
}

TEST(NormalDistribution, QuantileMatchesHighPrecisionValues) {
    EXPECT_NEAR(normal_quantile(0.95), 1.6448536269514727149, 1e-14);
    EXPECT_NEAR(normal_quantile(0.001), -3.0902323061678135415, 1e-14);
    EXPECT_NEAR(normal_quantile(1e-8), -5.6120012441747887315, 1e-13);
    EXPECT_DOUBLE_EQ(normal_quantile(0.5), 0.0);
}

TEST(NormalDistribution, QuantileRejectsOutOfRange) {
    for (double p : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
        EXPECT_THROW((void)normal_quantile(p), DomainError) << p;
    }
    EXPECT_THROW((void)normal_cdf(std::nan("")), DomainError);
}

TEST(NormalDistribution, QuantileRoundTrip) {
    for (double lp = -8.0; lp <= -0.31; lp += 0.01) {
        for (double p : {std::pow(10.0, lp), 1.0 - std::pow(10.0, lp)}) {
            const double x = normal_quantile(p);
            const double back = p < 0.5 ? normal_cdf(x) : normal_upper_tail(x);
            const double target = p < 0.5 ? p : 1.0 - p;
            EXPECT_NEAR(back / target, 1.0, 1e-13) << "p=" << p;
        }
    }
}

TEST(NormalDistribution, QuantileIsMonotone) {
    double prev = -INFINITY;
    for (int i = 1; i < 10000; ++i) {
        const double x = normal_quantile(i / 10000.0);
        EXPECT_GT(x, prev);
        prev = x;
    }
}

TEST(StudentT, CdfMatchesHighPrecisionValues) {
    EXPECT_NEAR(t_cdf(2.0, 10.0), 0.96330598261462981719, 1e-14);
    EXPECT_NEAR(t_cdf(1.5, 3.0), 0.88470806737758847386, 1e-14);
    EXPECT_NEAR(t_cdf(-2.5, 1.0), 0.12111894159084339872, 1e-14);
}

TEST(StudentT, CdfMatchesQuadrature) {
    for (double df : {1.0, 2.0, 5.0, 17.0, 236.0, 1000.0}) {
        for (double x : {0.1, 0.7, 1.3, 2.2, 3.9}) {
            EXPECT_NEAR(t_cdf(x, df), t_cdf_by_quadrature(x, df), 1e-11) << "df=" << df << " x=" << x;
            EXPECT_NEAR(t_cdf(-x, df), 1.0 - t_cdf_by_quadrature(x, df), 1e-11);
        }
    }
}

TEST(StudentT, QuantileInvertsCdfAndApproachesNormal) {
    for (double df : {1.0, 4.0, 30.0, 477.0}) {
        for (double p : {0.01, 0.05, 0.5, 0.9, 0.975}) {
            EXPECT_NEAR(t_cdf(t_quantile(p, df), df), p, 1e-13);
        }
    }
    EXPECT_NEAR(t_quantile(0.95, 1e7), normal_quantile(0.95), 1e-6);
    EXPECT_THROW((void)t_cdf(1.0, 0.5), DomainError);
    EXPECT_THROW((void)t_quantile(1.0, 5.0), DomainError);
}

TEST(Philox, KnownAnswerVectors) {
    using Ctr = std::array<std::uint32_t, 4>;
    EXPECT_EQ(philox4x32_10({0, 0, 0, 0}, {0, 0}), (Ctr{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (Ctr{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (Ctr{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, SameSeedAndStreamReproduce) {
    RngStream a(42, 7), b(42, 7);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    EXPECT_EQ(a.position(), 1000u);
}

TEST(RngStream, StreamsAndSeedsDiffer) {
    RngStream a(42, 7), b(42, 8), c(43, 7);
    int same_stream = 0, same_seed = 0;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        same_stream += x == b.next_u64();
        same_seed += x == c.next_u64();
    }
    EXPECT_EQ(same_stream, 0);
    EXPECT_EQ(same_seed, 0);
}

TEST(RngStream, UniformsLieInOpenInterval) {
    RngStream rng(1, 0);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.next_uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(RngStream, StandardNormalMoments) {
    RngStream rng(2024, 3);
    const int n = 1'000'000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.next_standard_normal();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 0.0, 0.005);
    EXPECT_NEAR(sum_sq / n - mean * mean, 1.0, 0.006);
}

TEST(SampleNormal, ZeroSdGivesConstantAndNegativeSdThrows) {
    RngStream rng(5, 5);
    for (double y : sample_normal(rng, 3.25, 0.0, 50)) EXPECT_EQ(y, 3.25);
    EXPECT_THROW(sample_normal(rng, 0.0, -1.0, 3), DomainError);
}

TEST(SampleNormal, AffineInDrawsForSameStream) {
    RngStream a(9, 1), b(9, 1);
    const auto z = sample_normal(a, 0.0, 1.0, 200);
    const auto y = sample_normal(b, 1.5, 2.5, 200);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(y[i], 1.5 + 2.5 * z[i], 1e-12);
}

TEST(SampleStats, SmallExamples) {
    const std::vector<double> xs{1.0, 2.0, 3.0};
    const SampleStats s = accumulate(xs);
    EXPECT_EQ(s.n, 3);
    EXPECT_DOUBLE_EQ(s.mean(), 2.0);
    EXPECT_DOUBLE_EQ(s.variance(), 1.0);
    const std::vector<double> one{4.0};
    EXPECT_TRUE(std::isnan(accumulate(one).variance()));
    const std::vector<double> flat{0.1, 0.1, 0.1, 0.1};
    EXPECT_GE(accumulate(flat).variance(), 0.0);
}

TEST(SampleStats, MergeEqualsConcatenation) {
    std::mt19937_64 gen(11);
    std::normal_distribution<double> d(3.0, 2.0);
    std::vector<double> a(37), b(51);
    for (double& x : a) x = d(gen);
    for (double& x : b) x = d(gen);
    SampleStats merged = accumulate(a);
    merged.merge(accumulate(b));
    std::vector<double> all = a;
    all.insert(all.end(), b.begin(), b.end());
    const SampleStats direct = accumulate(all);
    EXPECT_EQ(merged.n, direct.n);
    EXPECT_NEAR(merged.mean(), direct.mean(), 1e-13);
    EXPECT_NEAR(merged.variance(), direct.variance(), 1e-12);
}

TEST(SampleStats, VarianceIsShiftInvariantAndScalesQuadratically) {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> xs(2 + rep % 30);
        for (double& x : xs) x = d(gen);
        const double c = 0.5 + rep * 0.1;
        const double b = -20.0 + rep * 0.4;
        std::vector<double> ys = xs;
        for (double& y : ys) y = c * y + b;
        const double vx = accumulate(xs).variance();
        EXPECT_NEAR(accumulate(ys).variance(), c * c * vx, 1e-9 * (1.0 + c * c * vx));
    }
}
