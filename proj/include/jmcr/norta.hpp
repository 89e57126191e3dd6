#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "jmcr/errors.hpp"
#include "jmcr/stats.hpp"

namespace jmcr {

// Gaussian-copula generation of non-Gaussian vectors with a target Pearson
// correlation. Each margin's quantile function is a step function on the
// integers, so its Hermite expansion has exact coefficients
//   c_m = sum_y He_{m-1}(a_y) phi(a_y),   a_y = PhiInv(F(y)),
// and the response-scale covariance at latent correlation lambda is the
// power series sum_m lambda^m c_m^2 / m!. Coefficients are stored normalized
// by sqrt(m!) to keep the recurrence in range.

inline constexpr int kHermiteTerms = 128;
// Thresholds beyond this many standard deviations contribute nothing at
// double precision.
inline constexpr double kThresholdCut = 8.3;

struct DiscreteMargin {
    std::vector<double> cdf;  // cdf[y] = P(Y <= y); support is 0..cdf.size()-1
    double mean = 0.0;
    double sd = 0.0;          // exact model standard deviation
    Eigen::VectorXd herm;     // normalized Hermite coefficients, index m-1
    double captured_var = 0.0;

    int sample(double u) const {
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) return static_cast<int>(cdf.size()) - 1;
        return static_cast<int>(it - cdf.begin());
    }
};

namespace norta_detail {

inline void fill_hermite(DiscreteMargin& m) {
    m.herm = Eigen::VectorXd::Zero(kHermiteTerms);
    const int top = static_cast<int>(m.cdf.size()) - 1;
    for (int y = 0; y < top; ++y) {
        const double u = m.cdf[static_cast<std::size_t>(y)];
        if (u <= 0.0 || u >= 1.0) continue;
        const double a = normal_quantile(u);
        if (std::abs(a) > kThresholdCut) continue;
        const double w = normal_pdf(a);
        // Normalized recurrence: t_m = He_m(a) / sqrt(m!)
        double t_prev = 1.0;  // m = 0
        double t_cur = a;     // m = 1
        m.herm(0) += w * t_prev;  // contributes to c~_1
        for (int mm = 2; mm <= kHermiteTerms; ++mm) {
            m.herm(mm - 1) += w * t_cur / std::sqrt(static_cast<double>(mm));
            const double t_next =
                (a * t_cur - std::sqrt(static_cast<double>(mm - 1)) * t_prev) /
                std::sqrt(static_cast<double>(mm));
            t_prev = t_cur;
            t_cur = t_next;
        }
    }
    m.captured_var = m.herm.squaredNorm();
}

} // namespace norta_detail

inline DiscreteMargin bernoulli_margin(double mu) {
    if (!(mu > 0.0 && mu < 1.0)) throw InvalidInputError("bernoulli_margin: mu in (0,1)");
    DiscreteMargin m;
    m.cdf = {1.0 - mu, 1.0};
    m.mean = mu;
    m.sd = std::sqrt(mu * (1.0 - mu));
    norta_detail::fill_hermite(m);
    return m;
}

inline DiscreteMargin poisson_margin(double mu) {
    if (!(mu > 0.0)) throw InvalidInputError("poisson_margin: mu must be positive");
    DiscreteMargin m;
    double pmf = std::exp(-mu);
    double cum = pmf;
    m.cdf.push_back(cum);
    const int cap = static_cast<int>(10.0 * mu + 200.0);
    for (int y = 0; y < cap && cum < 1.0 - 1e-14; ++y) {
        pmf *= mu / (y + 1);
        cum += pmf;
        m.cdf.push_back(std::min(cum, 1.0));
    }
    m.cdf.back() = 1.0;
    m.mean = mu;
    m.sd = std::sqrt(mu);
    norta_detail::fill_hermite(m);
    return m;
}

// Negative binomial parameterized by mean and the quadratic overdispersion
// phi, Var = mu + phi mu^2 (size 1/phi).
inline DiscreteMargin negbin_margin(double mu, double phi) {
    if (!(mu > 0.0 && phi > 0.0)) throw InvalidInputError("negbin_margin: mu, phi must be positive");
    const double r = 1.0 / phi;
    const double q = mu / (r + mu);  // failure probability
    DiscreteMargin m;
    double pmf = std::pow(r / (r + mu), r);
    double cum = pmf;
    m.cdf.push_back(cum);
    const double var = mu + phi * mu * mu;
    const int cap = static_cast<int>(10.0 * (mu + 4.0 * std::sqrt(var)) + 400.0);
    for (int y = 0; y < cap && cum < 1.0 - 1e-14; ++y) {
        pmf *= (y + r) / (y + 1.0) * q;
        cum += pmf;
        m.cdf.push_back(std::min(cum, 1.0));
    }
    m.cdf.back() = 1.0;
    m.mean = mu;
    m.sd = std::sqrt(var);
    norta_detail::fill_hermite(m);
    return m;
}

// ---------------------------------------------------------------------------
// Pairwise latent correlation
// ---------------------------------------------------------------------------

// Response-scale covariance of the pair at latent correlation lambda.
inline double pair_covariance(const DiscreteMargin& a, const DiscreteMargin& b, double lambda) {
    double acc = 0.0;
    double lp = 1.0;
    for (int m = 0; m < kHermiteTerms; ++m) {
        lp *= lambda;
        acc += lp * a.herm(m) * b.herm(m);
    }
    return acc;
}

inline double pair_correlation(const DiscreteMargin& a, const DiscreteMargin& b, double lambda) {
    return pair_covariance(a, b, lambda) / (a.sd * b.sd);
}

// Exact attainable correlation at the comonotone (+) or antimonotone (-)
// coupling, via a merged walk over both step functions.
inline double frechet_correlation(const DiscreteMargin& a, const DiscreteMargin& b,
                                  bool comonotone) {
    struct Event {
        double z;
        int which;  // 0: margin a steps up; 1: margin b steps (up or down)
    };
    std::vector<Event> events;
    const int ta = static_cast<int>(a.cdf.size()) - 1;
    const int tb = static_cast<int>(b.cdf.size()) - 1;
    events.reserve(static_cast<std::size_t>(ta + tb));
    for (int y = 0; y < ta; ++y) {
        const double u = a.cdf[static_cast<std::size_t>(y)];
        if (u > 0.0 && u < 1.0) events.push_back({normal_quantile(u), 0});
    }
    for (int y = 0; y < tb; ++y) {
        const double u = b.cdf[static_cast<std::size_t>(y)];
        if (u > 0.0 && u < 1.0) events.push_back({comonotone ? normal_quantile(u) : -normal_quantile(u), 1});
    }
    std::sort(events.begin(), events.end(), [](const Event& x, const Event& y) { return x.z < y.z; });

    double ya = 0.0;
    double yb = comonotone ? 0.0 : static_cast<double>(tb);
    double prev_cdf = 0.0;
    double acc = 0.0;
    for (const Event& e : events) {
        const double cur_cdf = normal_cdf(e.z);
        acc += ya * yb * (cur_cdf - prev_cdf);
        prev_cdf = cur_cdf;
        if (e.which == 0) ya += 1.0;
        else yb += comonotone ? 1.0 : -1.0;
    }
    acc += ya * yb * (1.0 - prev_cdf);
    return (acc - a.mean * b.mean) / (a.sd * b.sd);
}

// Root-solve pair_correlation(lambda) = target. The map is nondecreasing in
// lambda for quantile transforms, so a safeguarded secant (Illinois) works.
inline double solve_latent_correlation(const DiscreteMargin& a, const DiscreteMargin& b,
                                       double target, const std::string& pair_name = "") {
    if (target == 0.0) return 0.0;
    const double hi_corr = frechet_correlation(a, b, true);
    const double lo_corr = frechet_correlation(a, b, false);
    if (target >= hi_corr - 1e-9 || target <= lo_corr + 1e-9) {
        throw InfeasibleCorrelationError(
            "target correlation " + std::to_string(target) + " outside attainable range [" +
            std::to_string(lo_corr) + ", " + std::to_string(hi_corr) + "]" +
            (pair_name.empty() ? "" : " for pair " + pair_name));
    }
    double lo = -0.9995, hi = 0.9995;
    double flo = pair_correlation(a, b, lo) - target;
    double fhi = pair_correlation(a, b, hi) - target;
    if (flo > 0.0 || fhi < 0.0) {
        throw InfeasibleCorrelationError(
            "target correlation " + std::to_string(target) +
            " requires a near-degenerate latent correlation" +
            (pair_name.empty() ? "" : " for pair " + pair_name));
    }
    // Illinois variant of regula falsi.
    double x = 0.0;
    for (int it = 0; it < 200; ++it) {
        x = (lo * fhi - hi * flo) / (fhi - flo);
        if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
        const double fx = pair_correlation(a, b, x) - target;
        if (std::abs(fx) < 1e-11 || hi - lo < 1e-13) return x;
        if ((fx > 0.0) == (fhi > 0.0)) {
            hi = x;
            fhi = fx;
            flo *= 0.5;
        } else {
            lo = x;
            flo = fx;
            fhi *= 0.5;
        }
    }
    return x;
}

// ---------------------------------------------------------------------------
// Margin cache
// ---------------------------------------------------------------------------

// Margins and pair solves repeat heavily when covariates repeat across
// clusters; both are memoized on quantized keys.
class MarginCache {
public:
    enum class Kind { Bernoulli, Poisson, NegBin };

    const DiscreteMargin* get(Kind kind, double mu, double phi) {
        const Key key{kind, quantize(mu), quantize(phi)};
        auto it = margins_.find(key);
        if (it != margins_.end()) return it->second.get();
        std::unique_ptr<DiscreteMargin> m;
        switch (kind) {
            case Kind::Bernoulli: m = std::make_unique<DiscreteMargin>(bernoulli_margin(mu)); break;
            case Kind::Poisson: m = std::make_unique<DiscreteMargin>(poisson_margin(mu)); break;
            case Kind::NegBin: m = std::make_unique<DiscreteMargin>(negbin_margin(mu, phi)); break;
        }
        const DiscreteMargin* out = m.get();
        margins_.emplace(key, std::move(m));
        return out;
    }

    double latent(const DiscreteMargin* a, const DiscreteMargin* b, double target,
                  const std::string& pair_name) {
        const PairKey key{a, b, quantize(target)};
        auto it = pairs_.find(key);
        if (it != pairs_.end()) return it->second;
        const double lambda = solve_latent_correlation(*a, *b, target, pair_name);
        pairs_.emplace(key, lambda);
        return lambda;
    }

private:
    static std::int64_t quantize(double x) {
        return static_cast<std::int64_t>(std::llround(x * 1e12));
    }

    struct Key {
        Kind kind;
        std::int64_t mu_q;
        std::int64_t phi_q;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            std::size_t h = std::hash<int>()(static_cast<int>(k.kind));
            h ^= std::hash<std::int64_t>()(k.mu_q) + 0x9e3779b9 + (h << 6) + (h >> 2);
            h ^= std::hash<std::int64_t>()(k.phi_q) + 0x9e3779b9 + (h << 6) + (h >> 2);
            return h;
        }
    };
    struct PairKey {
        const DiscreteMargin* a;
        const DiscreteMargin* b;
        std::int64_t target_q;
        bool operator==(const PairKey&) const = default;
    };
    struct PairKeyHash {
        std::size_t operator()(const PairKey& k) const {
            std::size_t h = std::hash<const void*>()(k.a);
            h ^= std::hash<const void*>()(k.b) + 0x9e3779b9 + (h << 6) + (h >> 2);
            h ^= std::hash<std::int64_t>()(k.target_q) + 0x9e3779b9 + (h << 6) + (h >> 2);
            return h;
        }
    };

    std::unordered_map<Key, std::unique_ptr<DiscreteMargin>, KeyHash> margins_;
    std::unordered_map<PairKey, double, PairKeyHash> pairs_;
};

// Nearest-PD repair for a latent correlation matrix that came out indefinite
// (a known NORTA artifact): clip eigenvalues at a small floor and rescale the
// diagonal back to ones. Returns true when a repair was applied.
inline bool repair_latent_correlation(Eigen::MatrixXd& lambda, double floor_eig = 1e-6) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lambda);
    if (es.eigenvalues().minCoeff() > floor_eig) return false;
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor_eig);
    lambda = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd dinv = lambda.diagonal().cwiseSqrt().cwiseInverse();
    lambda = dinv.asDiagonal() * lambda * dinv.asDiagonal();
    lambda.diagonal().setOnes();
    return true;
}

} // namespace jmcr
