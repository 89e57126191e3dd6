#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "jmcr/errors.hpp"

namespace jmcr {

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Inverse standard normal CDF: rational approximation (Acklam) polished with
// one Halley step against erfc, which brings it to full double precision.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw InvalidInputError("normal_quantile: p must lie in [0, 1]");
    }
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement: e = Phi(x) - p.
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
    return x;
}

inline double chi_squared_quantile(double prob, double df) {
    boost::math::chi_squared_distribution<double> dist(df);
    return boost::math::quantile(dist, prob);
}

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// All randomness in the project flows through this wrapper so that results
// are reproducible for a given seed independent of platform library choices:
// uniforms come straight off mt19937_64 bits, normals via inverse CDF.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on (0, 1), never returning an exact endpoint.
    double uniform() {
        const double u = (engine_() >> 11) * 0x1.0p-53;
        return u == 0.0 ? 0x1.0p-54 : u;
    }

    double normal() { return normal_quantile(uniform()); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, m).
    std::uint64_t index(std::uint64_t m) { return engine_() % m; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// SplitMix64 step, used to derive independent per-replicate seeds from a
// master seed without overlapping streams.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace jmcr
