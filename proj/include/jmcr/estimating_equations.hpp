#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "jmcr/model.hpp"
#include "jmcr/parallel.hpp"

namespace jmcr {

// The np x np working covariance is I_n (x) Sigma(alpha), so every solve is a
// p x p solve reused across clusters. Nothing in this header materializes an
// np x np matrix; the dense reference that does lives in the test suite.

// ---------------------------------------------------------------------------
// Cached per-iterate quantities
// ---------------------------------------------------------------------------

// Everything that depends on beta/phi only: means, variance roots, Pearson
// residuals and the weight q_ij = (d mu/d eta)_ij / sqrt(h_ij).
struct ModelEval {
    MatrixXd mu;      // n x p
    MatrixXd sqrt_h;  // n x p
    MatrixXd q;       // n x p
    MatrixXd eps;     // n x p Pearson residuals
    std::int64_t clamp_count = 0;
};

inline ModelEval evaluate_model(const ModelSpec& spec, const Dataset& ds,
                                const ParameterState& state) {
    ModelEval ev;
    ev.mu = mean_matrix(spec, state.beta, ds.X, &ev.clamp_count);
    const int n = ds.n(), p = ds.p();
    ev.sqrt_h.resize(n, p);
    ev.q.resize(n, p);
    ev.eps.resize(n, p);
    for (int j = 0; j < p; ++j) {
        const double phi_j = state.phi(j);
        for (int i = 0; i < n; ++i) {
            double h;
            try {
                h = variance_apply(spec, ev.mu(i, j), phi_j);
            } catch (const Error& e) {
                throw DegenerateVarianceError(std::string(e.what()) + " [cluster " +
                                              std::to_string(i + 1) + ", response " +
                                              std::to_string(j + 1) + "]");
            }
            const double sh = std::sqrt(h);
            ev.sqrt_h(i, j) = sh;
            ev.q(i, j) = link_inverse_deriv(spec, ev.mu(i, j)) / sh;
            ev.eps(i, j) = (ds.Y(i, j) - ev.mu(i, j)) / sh;
        }
    }
    return ev;
}

struct ResidualSet {
    MatrixXd eps;  // n x p
};

inline ResidualSet pearson_residuals(const ModelSpec& spec, const Dataset& ds,
                                     const ParameterState& state) {
    return ResidualSet{evaluate_model(spec, ds, state).eps};
}

// Sigma(alpha) = alpha_0 I_p + sum_k alpha_k W_k.
inline MatrixXd sigma_of_alpha(const std::vector<MatrixXd>& basis, const VectorXd& alpha, int p) {
    MatrixXd sigma = alpha(0) * MatrixXd::Identity(p, p);
    for (std::size_t k = 0; k < basis.size(); ++k) sigma += alpha(static_cast<int>(k) + 1) * basis[k];
    return sigma;
}

struct WorkingCov {
    MatrixXd sigma;      // p x p
    MatrixXd sigma_inv;  // p x p
};

inline WorkingCov working_cov(const std::vector<MatrixXd>& basis, const VectorXd& alpha, int p) {
    WorkingCov wc;
    wc.sigma = sigma_of_alpha(basis, alpha, p);
    Eigen::LLT<MatrixXd> llt(wc.sigma);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefiniteError("working covariance Sigma(alpha) is not positive definite");
    wc.sigma_inv = llt.solve(MatrixXd::Identity(p, p));
    return wc;
}

// ---------------------------------------------------------------------------
// Trace Gram matrix
// ---------------------------------------------------------------------------

// (K+1) x (K+1) matrix of n * tr(W_{k1} W_{k2}) with W_0 = I_p. Constant over
// a fit, so callers compute it once.
struct TraceGram {
    MatrixXd M;

    // Per-cluster version tr(W_{k1} W_{k2}), i.e. M / n.
    MatrixXd per_cluster(int n) const { return M / static_cast<double>(n); }
};

inline TraceGram trace_gram(const Dataset& ds) {
    const int K = ds.K(), p = ds.p();
    const double n = static_cast<double>(ds.n());
    MatrixXd M(K + 1, K + 1);
    M(0, 0) = n * p;
    for (int k = 1; k <= K; ++k) {
        // tr(W_k) = 0 by the zero-diagonal convention.
        M(0, k) = n * ds.basis[static_cast<std::size_t>(k - 1)].trace();
        M(k, 0) = M(0, k);
    }
    for (int k1 = 1; k1 <= K; ++k1)
        for (int k2 = k1; k2 <= K; ++k2) {
            const double t =
                n * ds.basis[static_cast<std::size_t>(k1 - 1)]
                        .cwiseProduct(ds.basis[static_cast<std::size_t>(k2 - 1)].transpose())
                        .sum();
            M(k1, k2) = t;
            M(k2, k1) = t;
        }
    return TraceGram{std::move(M)};
}

// ---------------------------------------------------------------------------
// Score evaluations
// ---------------------------------------------------------------------------

// v_k = sum_i eps_i' W_k eps_i for k = 0..K (W_0 = I). Ordered block
// reduction over clusters keeps the sum bit-stable across thread counts.
inline VectorXd basis_quadratic_forms(const std::vector<MatrixXd>& basis, const MatrixXd& eps) {
    const int K = static_cast<int>(basis.size());
    const std::size_t n = static_cast<std::size_t>(eps.rows());
    return block_reduce<VectorXd>(
        n, kClusterBlock, [&] { return VectorXd::Zero(K + 1).eval(); },
        [&](VectorXd& part, std::size_t i) {
            const auto e = eps.row(static_cast<Eigen::Index>(i));
            part(0) += e.squaredNorm();
            for (int k = 0; k < K; ++k) part(k + 1) += e * basis[static_cast<std::size_t>(k)] * e.transpose();
        },
        [](VectorXd& total, const VectorXd& part) { total += part; });
}

// Stacked pd-vector, block j = sum_i q_ij [Sigma^{-1} eps_i]_j x_i.
inline VectorXd psi_beta_eval(const Dataset& ds, const ModelEval& ev, const WorkingCov& wc) {
    const int p = ds.p(), d = ds.d();
    const std::size_t n = static_cast<std::size_t>(ds.n());
    const MatrixXd weights = ev.q.cwiseProduct(ev.eps * wc.sigma_inv);  // n x p
    MatrixXd contrib = block_reduce<MatrixXd>(
        n, kClusterBlock, [&] { return MatrixXd::Zero(d, p).eval(); },
        [&](MatrixXd& part, std::size_t i) {
            const Eigen::Index ii = static_cast<Eigen::Index>(i);
            part += ds.X.row(ii).transpose() * weights.row(ii);
        },
        [](MatrixXd& total, const MatrixXd& part) { total += part; });
    VectorXd out(p * d);
    for (int j = 0; j < p; ++j) out.segment(j * d, d) = contrib.col(j);
    return out;
}

inline VectorXd psi_alpha_eval(const Dataset& ds, const ModelEval& ev, const TraceGram& tg,
                               const VectorXd& alpha) {
    return basis_quadratic_forms(ds.basis, ev.eps) - tg.M * alpha;
}

// Least squares loss sum_i ||eps_i eps_i' - Sigma(alpha)||_F^2, expanded so no
// p x p outer product is formed per cluster.
inline double q_loss_eval(const Dataset& ds, const ModelEval& ev, const MatrixXd& sigma) {
    const std::size_t n = static_cast<std::size_t>(ds.n());
    const double loss = block_reduce<double>(
        n, kClusterBlock, [] { return 0.0; },
        [&](double& part, std::size_t i) {
            const auto e = ev.eps.row(static_cast<Eigen::Index>(i));
            const double ss = e.squaredNorm();
            part += ss * ss - 2.0 * (e * sigma * e.transpose())(0, 0);
        },
        [](double& total, double part) { total += part; });
    return loss + static_cast<double>(ds.n()) * sigma.squaredNorm();
}

// Expected derivative of the beta score: pd x pd, block (j1, j2) equal to
// -[Sigma^{-1}]_{j1 j2} Z_{j1}' Z_{j2} with Z_j = diag(q_.j) X. Returned
// dense; the block structure is exploited during assembly only.
inline MatrixXd fisher_info_eval(const Dataset& ds, const ModelEval& ev, const WorkingCov& wc) {
    const int p = ds.p(), d = ds.d();
    const Eigen::Index n = ds.X.rows();
    MatrixXd Z(n, static_cast<Eigen::Index>(p) * d);
    for (int j = 0; j < p; ++j)
        Z.middleCols(static_cast<Eigen::Index>(j) * d, d) = ev.q.col(j).asDiagonal() * ds.X;
    MatrixXd J(p * d, p * d);
    parallel_blocks(static_cast<std::size_t>(p), 1, [&](std::size_t, std::size_t j1s, std::size_t) {
        const int j1 = static_cast<int>(j1s);
        for (int j2 = j1; j2 < p; ++j2) {
            const MatrixXd block = -wc.sigma_inv(j1, j2) *
                                   (Z.middleCols(static_cast<Eigen::Index>(j1) * d, d).transpose() *
                                    Z.middleCols(static_cast<Eigen::Index>(j2) * d, d));
            J.block(j1 * d, j2 * d, d, d) = block;
            if (j2 != j1) J.block(j2 * d, j1 * d, d, d) = block.transpose();
        }
    });
    return J;
}

// ---------------------------------------------------------------------------
// Spec-level wrappers (one-shot evaluation from a parameter state)
// ---------------------------------------------------------------------------

inline VectorXd psi_beta(const ModelSpec& spec, const Dataset& ds, const ParameterState& state) {
    const ModelEval ev = evaluate_model(spec, ds, state);
    const WorkingCov wc = working_cov(ds.basis, state.alpha, ds.p());
    return psi_beta_eval(ds, ev, wc);
}

inline VectorXd psi_alpha(const ModelSpec& spec, const Dataset& ds, const ParameterState& state) {
    const ModelEval ev = evaluate_model(spec, ds, state);
    return psi_alpha_eval(ds, ev, trace_gram(ds), state.alpha);
}

inline double q_loss(const ModelSpec& spec, const Dataset& ds, const ParameterState& state) {
    const ModelEval ev = evaluate_model(spec, ds, state);
    return q_loss_eval(ds, ev, sigma_of_alpha(ds.basis, state.alpha, ds.p()));
}

inline MatrixXd fisher_info(const ModelSpec& spec, const Dataset& ds, const ParameterState& state) {
    const ModelEval ev = evaluate_model(spec, ds, state);
    const WorkingCov wc = working_cov(ds.basis, state.alpha, ds.p());
    return fisher_info_eval(ds, ev, wc);
}

} // namespace jmcr
