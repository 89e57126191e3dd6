#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmcr/errors.hpp"

namespace jmcr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Link { Identity, Log, Logit };

enum class VarianceFamily {
    Constant,      // h(mu; phi) = phi
    Proportional,  // h(mu; phi) = phi * mu
    Quadratic,     // h(mu; phi) = mu + phi * mu^2
    Binary         // h(mu; phi) = phi * mu * (1 - mu)
};

inline const char* to_string(Link link) {
    switch (link) {
        case Link::Identity: return "identity";
        case Link::Log: return "log";
        case Link::Logit: return "logit";
    }
    return "?";
}

inline const char* to_string(VarianceFamily v) {
    switch (v) {
        case VarianceFamily::Constant: return "constant";
        case VarianceFamily::Proportional: return "proportional";
        case VarianceFamily::Quadratic: return "quadratic";
        case VarianceFamily::Binary: return "binary";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ModelSpec
// ---------------------------------------------------------------------------

struct ModelSpec {
    Link link = Link::Identity;
    VarianceFamily variance = VarianceFamily::Constant;
    int n = 0;  // clusters
    int p = 0;  // responses per cluster
    int d = 0;  // covariates, including the intercept
    int K = 0;  // similarity matrices

    void validate() const {
        if (n < 2) throw InvalidInputError("ModelSpec: need at least 2 clusters");
        if (p < 2) throw InvalidInputError("ModelSpec: need at least 2 responses");
        if (d < 1) throw InvalidInputError("ModelSpec: need at least the intercept covariate");
        if (K < 0) throw InvalidInputError("ModelSpec: K must be nonnegative");
        // Pairings outside the usual menu are rejected rather than silently fit.
        const bool ok =
            (link == Link::Identity && variance == VarianceFamily::Constant) ||
            (link == Link::Log && (variance == VarianceFamily::Proportional ||
                                   variance == VarianceFamily::Quadratic)) ||
            (link == Link::Logit && variance == VarianceFamily::Binary);
        if (!ok) {
            throw InvalidInputError(std::string("ModelSpec: unsupported link/variance pair (") +
                                    to_string(link) + ", " + to_string(variance) + ")");
        }
    }
};

// Cap on |linear predictor| before inversion under log/logit; finite-sample
// iterates can excurse even when the data are well behaved.
inline constexpr double kEtaClamp = 30.0;
// Floor applied to the mean inside mu-proportional variance functions so the
// variance keeps a positive lower bound.
inline constexpr double kMeanFloor = 1e-10;

// ---------------------------------------------------------------------------
// Link functions
// ---------------------------------------------------------------------------

inline double link_apply(const ModelSpec& spec, double mu) {
    switch (spec.link) {
        case Link::Identity:
            return mu;
        case Link::Log:
            if (!(mu > 0.0)) throw InvalidInputError("link_apply: log link needs mu > 0");
            return std::log(mu);
        case Link::Logit:
            if (!(mu > 0.0 && mu < 1.0))
                throw InvalidInputError("link_apply: logit link needs mu in (0, 1)");
            return std::log(mu / (1.0 - mu));
    }
    return 0.0;
}

// Inverse link, with optional clamp accounting. `clamped` is incremented when
// |eta| exceeded the cap under log/logit.
inline double link_inverse(const ModelSpec& spec, double eta, std::int64_t* clamped = nullptr) {
    switch (spec.link) {
        case Link::Identity:
            return eta;
        case Link::Log: {
            if (std::abs(eta) > kEtaClamp) {
                if (clamped) ++(*clamped);
                eta = eta > 0 ? kEtaClamp : -kEtaClamp;
            }
            return std::exp(eta);
        }
        case Link::Logit: {
            if (std::abs(eta) > kEtaClamp) {
                if (clamped) ++(*clamped);
                eta = eta > 0 ? kEtaClamp : -kEtaClamp;
            }
            return 1.0 / (1.0 + std::exp(-eta));
        }
    }
    return 0.0;
}

// d mu / d eta of the inverse link.
inline double link_inverse_deriv(const ModelSpec& spec, double mu) {
    switch (spec.link) {
        case Link::Identity: return 1.0;
        case Link::Log: return mu;
        case Link::Logit: return mu * (1.0 - mu);
    }
    return 0.0;
}

// d^2 mu / d eta^2 of the inverse link.
inline double link_inverse_deriv2(const ModelSpec& spec, double mu) {
    switch (spec.link) {
        case Link::Identity: return 0.0;
        case Link::Log: return mu;
        case Link::Logit: return mu * (1.0 - mu) * (1.0 - 2.0 * mu);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Variance functions
// ---------------------------------------------------------------------------

inline double variance_apply(const ModelSpec& spec, double mu, double phi) {
    if (!(phi > 0.0)) throw InvalidInputError("variance_apply: phi must be positive");
    double v = 0.0;
    switch (spec.variance) {
        case VarianceFamily::Constant:
            v = phi;
            break;
        case VarianceFamily::Proportional:
            v = phi * std::max(mu, kMeanFloor);
            break;
        case VarianceFamily::Quadratic: {
            const double m = std::max(mu, kMeanFloor);
            v = m + phi * m * m;
            break;
        }
        case VarianceFamily::Binary: {
            const double m = std::min(std::max(mu, kMeanFloor), 1.0 - kMeanFloor);
            v = phi * m * (1.0 - m);
            break;
        }
    }
    if (!(v > 0.0)) {
        throw DegenerateVarianceError("variance_apply: nonpositive variance at mu=" +
                                      std::to_string(mu));
    }
    return v;
}

// dh/dmu at (mu, phi), matching the floors used in variance_apply.
inline double variance_deriv_mu(const ModelSpec& spec, double mu, double phi) {
    switch (spec.variance) {
        case VarianceFamily::Constant:
            return 0.0;
        case VarianceFamily::Proportional:
            return mu > kMeanFloor ? phi : 0.0;
        case VarianceFamily::Quadratic:
            return mu > kMeanFloor ? 1.0 + 2.0 * phi * mu : 0.0;
        case VarianceFamily::Binary: {
            if (mu <= kMeanFloor || mu >= 1.0 - kMeanFloor) return 0.0;
            return phi * (1.0 - 2.0 * mu);
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Parameters and data
// ---------------------------------------------------------------------------

struct ParameterState {
    MatrixXd beta;   // p x d, row j = coefficients of response j
    VectorXd alpha;  // K+1, alpha(0) scales the identity component
    VectorXd rho;    // K, rho(k) = alpha(k+1) / alpha(0)
    VectorXd phi;    // p, per-response dispersions

    static ParameterState zero(int p, int d, int K) {
        ParameterState s;
        s.beta = MatrixXd::Zero(p, d);
        s.alpha = VectorXd::Zero(K + 1);
        s.alpha(0) = 1.0;
        s.rho = VectorXd::Zero(K);
        s.phi = VectorXd::Ones(p);
        return s;
    }

    void sync_rho() {
        if (!(alpha(0) > 0.0))
            throw InvalidTransformError("ParameterState: alpha_0 must be positive to form rho");
        rho = alpha.tail(alpha.size() - 1) / alpha(0);
    }
};

struct Dataset {
    MatrixXd Y;                   // n x p responses
    MatrixXd X;                   // n x d covariates, first column all ones
    std::vector<MatrixXd> basis;  // K symmetric p x p similarity matrices

    int n() const { return static_cast<int>(Y.rows()); }
    int p() const { return static_cast<int>(Y.cols()); }
    int d() const { return static_cast<int>(X.cols()); }
    int K() const { return static_cast<int>(basis.size()); }
};

inline void validate_dataset(const Dataset& ds, const ModelSpec& spec) {
    spec.validate();
    if (ds.n() != spec.n || ds.p() != spec.p || ds.d() != spec.d || ds.K() != spec.K)
        throw InvalidInputError("Dataset dimensions disagree with ModelSpec");
    if (ds.X.rows() != ds.Y.rows()) throw InvalidInputError("Dataset: X and Y row counts differ");
    if (!ds.Y.allFinite() || !ds.X.allFinite())
        throw InvalidInputError("Dataset: non-finite entries (balanced design, no missing cells)");
    for (int i = 0; i < ds.n(); ++i) {
        if (ds.X(i, 0) != 1.0)
            throw InvalidInputError("Dataset: X column 0 must be the all-ones intercept (row " +
                                    std::to_string(i + 1) + ")");
    }
    for (const auto& W : ds.basis) {
        if (W.rows() != spec.p || W.cols() != spec.p)
            throw InvalidInputError("Dataset: similarity matrix dimension mismatch");
    }
}

// ---------------------------------------------------------------------------
// Mean matrix
// ---------------------------------------------------------------------------

// mu[i][j] = g^{-1}(x_i' beta_j). `clamped` counts predictor clamps.
inline MatrixXd mean_matrix(const ModelSpec& spec, const MatrixXd& beta, const MatrixXd& X,
                            std::int64_t* clamped = nullptr) {
    if (beta.cols() != X.cols())
        throw InvalidInputError("mean_matrix: beta and X covariate counts differ");
    MatrixXd eta = X * beta.transpose();  // n x p
    MatrixXd mu(eta.rows(), eta.cols());
    for (Eigen::Index j = 0; j < eta.cols(); ++j)
        for (Eigen::Index i = 0; i < eta.rows(); ++i)
            mu(i, j) = link_inverse(spec, eta(i, j), clamped);
    return mu;
}

} // namespace jmcr
