#pragma once

// Numerical primitives shared by every other header: Normal and Student-t
// distribution functions, a counter-based random stream, and per-cell
// sufficient statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

namespace platformtrial {

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

namespace detail {

inline void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw DomainError(std::string(what) + ": argument must be finite");
    }
}

// Wichura's AS241 (PPND16). Caller guarantees 0 < p < 1.
inline double normal_quantile_unchecked(double p) noexcept {
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                   1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                   5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double x;
    if (r <= 5.0) {
        r -= 1.6;
        x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
              4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
              2.05319162663775882187e+0) * r + 1.0);
    } else {
        r -= 5.0;
        x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
              5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -x : x;
}

}  // namespace detail

/// Standard Normal CDF.
inline double normal_cdf(double x) {
    detail::require_finite(x, "normal_cdf");
    return 0.5 * std::erfc(-x * M_SQRT1_2);
}

/// 1 - normal_cdf(x), without cancellation in the upper tail.
inline double normal_upper_tail(double x) {
    detail::require_finite(x, "normal_upper_tail");
    return 0.5 * std::erfc(x * M_SQRT1_2);
}

/// Inverse of normal_cdf on the open unit interval.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError("normal_quantile: p must lie in (0, 1)");
    }
    return detail::normal_quantile_unchecked(p);
}

/// Student-t CDF with `df` degrees of freedom (df may be fractional, >= 1).
inline double t_cdf(double x, double df) {
    detail::require_finite(x, "t_cdf");
    if (!(df >= 1.0)) throw DomainError("t_cdf: df must be >= 1");
    return boost::math::cdf(boost::math::students_t_distribution<double>(df), x);
}

inline double t_upper_tail(double x, double df) {
    detail::require_finite(x, "t_upper_tail");
    if (!(df >= 1.0)) throw DomainError("t_upper_tail: df must be >= 1");
    return boost::math::cdf(
        boost::math::complement(boost::math::students_t_distribution<double>(df), x));
}

inline double t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("t_quantile: p must lie in (0, 1)");
    if (!(df >= 1.0)) throw DomainError("t_quantile: df must be >= 1");
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

/// Philox4x32-10 block function (Salmon et al.).
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) noexcept {
    constexpr std::uint64_t kMul0 = 0xD2511F53u;
    constexpr std::uint64_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = kMul0 * ctr[0];
        const std::uint64_t p1 = kMul1 * ctr[2];
        ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
               static_cast<std::uint32_t>(p1),
               static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
               static_cast<std::uint32_t>(p0)};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

/// Counter-based random stream. Draw `i` of stream (seed, stream_id) is a pure
/// function of those three numbers, so streams can be evaluated on any thread
/// in any order.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
        : seed_(seed), stream_id_(stream_id) {}

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }
    /// Number of 64-bit words consumed so far.
    [[nodiscard]] std::uint64_t position() const noexcept { return position_; }

    std::uint64_t next_u64() noexcept {
        if ((position_ & 1u) == 0) refill(position_ >> 1);
        const std::uint64_t word = buffer_[position_ & 1u];
        ++position_;
        return word;
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double next_uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_standard_normal() noexcept {
        return detail::normal_quantile_unchecked(next_uniform());
    }

private:
    void refill(std::uint64_t block) noexcept {
        const auto out = philox4x32_10(
            {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
             static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)},
            {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
        buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
        buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t position_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
};

inline std::vector<double> sample_normal(RngStream& rng, double mean, double sd, std::size_t n) {
    if (!(sd >= 0.0)) throw DomainError("sample_normal: sd must be >= 0");
    std::vector<double> out(n);
    for (auto& y : out) y = mean + sd * rng.next_standard_normal();
    return out;
}

/// Count, sum, and sum of squares of one cell of outcomes.
struct SampleStats {
    std::int64_t n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double y) noexcept {
        ++n;
        sum += y;
        sum_sq += y * y;
    }

    void merge(const SampleStats& other) noexcept {
        n += other.n;
        sum += other.sum;
        sum_sq += other.sum_sq;
    }

    [[nodiscard]] double mean() const noexcept { return sum / static_cast<double>(n); }

    /// Sum of squared deviations from the mean. Round-off can push the
    /// one-pass formula a few ulps of n * mean^2 below zero; that is clamped.
    [[nodiscard]] double centered_sum_sq() const noexcept {
        if (n < 1) return 0.0;
        return std::max(sum_sq - sum * mean(), 0.0);
    }

    /// Unbiased (n - 1) sample variance. NaN when n < 2.
    [[nodiscard]] double variance() const noexcept {
        if (n < 2) return std::numeric_limits<double>::quiet_NaN();
        return centered_sum_sq() / static_cast<double>(n - 1);
    }

    friend bool operator==(const SampleStats&, const SampleStats&) = default;
};

inline SampleStats accumulate(std::span<const double> values) noexcept {
    SampleStats stats;
    for (double y : values) stats.add(y);
    return stats;
}

}  // namespace platformtrial
