#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmcr/estimating_equations.hpp"
#include "jmcr/solver.hpp"
#include "jmcr/stats.hpp"

namespace jmcr {

// Plug-in sandwich pieces for the joint estimating-equation estimator. Bread
// is the summed analytic per-cluster score Jacobian, meat the summed
// per-cluster score outer products; dispersion parameters are treated as
// known. Raw (unscaled) and rate-scaled versions are both kept: the scaled
// ones separate the sqrt(n) mean block from the sqrt(np) correlation block.
struct SandwichParts {
    MatrixXd bread_raw;     // sum_i d psi_i / d vartheta'
    MatrixXd meat_raw;      // sum_i psi_i psi_i'
    MatrixXd Bhat;          // Z~^{-1} bread_raw Z~^{-1}
    MatrixXd Uhat;          // Z~^{-1} meat_raw Z~^{-1}
    MatrixXd Ghat_full;     // Bhat^{-1} Uhat Bhat^{-T}
    MatrixXd vartheta_cov;  // bread_raw^{-1} meat_raw bread_raw^{-T}
    double mu3 = 0.0;       // empirical third moment of decorrelated residuals
    double mu4 = 0.0;       // empirical fourth moment
};

namespace detail {

// Derivative of the Pearson residual in eta at one cell:
// d eps / d eta = -m [h^{-1/2} + (1/2) h^{-3/2} h' (y - mu)].
inline double residual_eta_deriv(const ModelSpec& spec, double y, double mu, double phi) {
    const double m = link_inverse_deriv(spec, mu);
    const double h = variance_apply(spec, mu, phi);
    const double hp = variance_deriv_mu(spec, mu, phi);
    return -m * (1.0 / std::sqrt(h) + 0.5 * (y - mu) * hp / (h * std::sqrt(h)));
}

// Derivative of the weight q = m h^{-1/2} in eta at one cell.
inline double weight_eta_deriv(const ModelSpec& spec, double mu, double phi) {
    const double m = link_inverse_deriv(spec, mu);
    const double m2 = link_inverse_deriv2(spec, mu);
    const double h = variance_apply(spec, mu, phi);
    const double hp = variance_deriv_mu(spec, mu, phi);
    return m2 / std::sqrt(h) - 0.5 * m * m * hp / (h * std::sqrt(h));
}

} // namespace detail

inline SandwichParts sandwich(const ModelSpec& spec, const Dataset& ds, const FitResult& fitted) {
    const int n = ds.n(), p = ds.p(), d = ds.d(), K = ds.K();
    const int pd = p * d, dim = pd + K + 1;
    const ParameterState& st = fitted.state;

    const ModelEval ev = evaluate_model(spec, ds, st);
    const WorkingCov wc = working_cov(ds.basis, st.alpha, p);
    const TraceGram tg = trace_gram(ds);
    const MatrixXd gram_pc = tg.per_cluster(n);

    // Cellwise derivative fields.
    MatrixXd eps_eta(n, p);   // d eps / d eta
    MatrixXd qdot(n, p);      // d q / d eta
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) {
            eps_eta(i, j) = detail::residual_eta_deriv(spec, ds.Y(i, j), ev.mu(i, j), st.phi(j));
            qdot(i, j) = detail::weight_eta_deriv(spec, ev.mu(i, j), st.phi(j));
        }

    const MatrixXd T = ev.eps * wc.sigma_inv;        // row i = (Sigma^{-1} eps_i)'
    const MatrixXd P = ev.q.cwiseProduct(T);         // beta-score weights

    MatrixXd bread = MatrixXd::Zero(dim, dim);

    // d psi_beta / d beta: block (j, l) =
    //   Sigma^{-1}_{jl} X' diag(q_.j o eps_eta_.l) X + delta_{jl} X' diag(qdot_.j o T_.j) X
    for (int j = 0; j < p; ++j) {
        for (int l = 0; l < p; ++l) {
            MatrixXd block = wc.sigma_inv(j, l) *
                             (ds.X.transpose() *
                              (ev.q.col(j).cwiseProduct(eps_eta.col(l))).asDiagonal() * ds.X);
            if (j == l)
                block += ds.X.transpose() * (qdot.col(j).cwiseProduct(T.col(j))).asDiagonal() * ds.X;
            bread.block(j * d, l * d, d, d) = block;
        }
    }

    // Cross blocks, one similarity matrix at a time (W_0 = I implicitly).
    for (int k = 0; k <= K; ++k) {
        const MatrixXd TW = k == 0 ? T : (T * ds.basis[static_cast<std::size_t>(k - 1)]).eval();
        const MatrixXd H = TW * wc.sigma_inv;  // row i = (Sigma^{-1} W_k Sigma^{-1} eps_i)'
        const MatrixXd E = k == 0 ? ev.eps : (ev.eps * ds.basis[static_cast<std::size_t>(k - 1)]).eval();
        for (int j = 0; j < p; ++j) {
            // d psi_beta,j / d alpha_k = -X' (q_.j o H_.j)
            bread.block(j * d, pd + k, d, 1) -=
                ds.X.transpose() * ev.q.col(j).cwiseProduct(H.col(j));
            // d psi_alpha,k / d beta_j = 2 X' (E_.j o eps_eta_.j)
            bread.block(pd + k, j * d, 1, d) +=
                2.0 * (ds.X.transpose() * E.col(j).cwiseProduct(eps_eta.col(j))).transpose();
        }
    }
    bread.block(pd, pd, K + 1, K + 1) = -static_cast<double>(n) * gram_pc;

    // Meat: ordered block reduction of per-cluster score outer products.
    MatrixXd meat = block_reduce<MatrixXd>(
        static_cast<std::size_t>(n), kClusterBlock,
        [&] { return MatrixXd::Zero(dim, dim).eval(); },
        [&](MatrixXd& part, std::size_t idx) {
            const Eigen::Index i = static_cast<Eigen::Index>(idx);
            VectorXd score(dim);
            for (int j = 0; j < p; ++j)
                score.segment(j * d, d) = P(i, j) * ds.X.row(i).transpose();
            const auto e = ev.eps.row(i);
            VectorXd quad(K + 1);
            quad(0) = e.squaredNorm();
            for (int k = 1; k <= K; ++k)
                quad(k) = e * ds.basis[static_cast<std::size_t>(k - 1)] * e.transpose();
            score.segment(pd, K + 1) = quad - gram_pc * st.alpha;
            part.noalias() += score * score.transpose();
        },
        [](MatrixXd& total, const MatrixXd& part) { total += part; });
    meat = 0.5 * (meat + meat.transpose()).eval();

    SandwichParts parts;
    parts.bread_raw = bread;
    parts.meat_raw = meat;

    VectorXd scale_inv(dim);
    scale_inv.head(pd).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
    scale_inv.tail(K + 1).setConstant(1.0 / std::sqrt(static_cast<double>(n) * p));
    parts.Bhat = scale_inv.asDiagonal() * bread * scale_inv.asDiagonal();
    parts.Uhat = scale_inv.asDiagonal() * meat * scale_inv.asDiagonal();

    Eigen::PartialPivLU<MatrixXd> blu(parts.Bhat);
    if (std::abs(blu.determinant()) < 1e-300)
        throw SingularInformationError("sandwich: bread matrix is not invertible");
    const MatrixXd binv_u = blu.solve(parts.Uhat);
    parts.Ghat_full = blu.solve(binv_u.transpose()).transpose();
    parts.Ghat_full = 0.5 * (parts.Ghat_full + parts.Ghat_full.transpose()).eval();

    Eigen::PartialPivLU<MatrixXd> rlu(bread);
    const MatrixXd rinv_u = rlu.solve(meat);
    parts.vartheta_cov = rlu.solve(rinv_u.transpose()).transpose();
    parts.vartheta_cov = 0.5 * (parts.vartheta_cov + parts.vartheta_cov.transpose()).eval();

    // Empirical higher moments of the decorrelated residuals.
    Eigen::LLT<MatrixXd> llt(wc.sigma);
    double m3 = 0.0, m4 = 0.0;
    for (int i = 0; i < n; ++i) {
        const VectorXd z = llt.matrixL().solve(ev.eps.row(i).transpose());
        for (int j = 0; j < p; ++j) {
            const double zz = z(j);
            m3 += zz * zz * zz;
            m4 += zz * zz * zz * zz;
        }
    }
    parts.mu3 = m3 / (static_cast<double>(n) * p);
    parts.mu4 = m4 / (static_cast<double>(n) * p);
    return parts;
}

// ---------------------------------------------------------------------------
// Delta method: vartheta = (beta, alpha) -> theta = (beta, rho)
// ---------------------------------------------------------------------------

// Jacobian of f(vartheta) = (beta, alpha_1/alpha_0, ..., alpha_K/alpha_0).
inline MatrixXd delta_jacobian(const VectorXd& alpha, int pd) {
    const int K = static_cast<int>(alpha.size()) - 1;
    if (!(alpha(0) > 0.0))
        throw InvalidTransformError("delta_jacobian: alpha_0 must be positive");
    MatrixXd F = MatrixXd::Zero(pd + K, pd + K + 1);
    F.topLeftCorner(pd, pd).setIdentity();
    for (int k = 0; k < K; ++k) {
        F(pd + k, pd) = -alpha(k + 1) / (alpha(0) * alpha(0));
        F(pd + k, pd + 1 + k) = 1.0 / alpha(0);
    }
    return F;
}

// Covariance of theta_hat = (beta_hat, rho_hat).
inline MatrixXd delta_to_theta(const SandwichParts& parts, const FitResult& fitted) {
    const int dim = static_cast<int>(parts.vartheta_cov.rows());
    const int K = static_cast<int>(fitted.state.alpha.size()) - 1;
    const int pd = dim - K - 1;
    const MatrixXd F = delta_jacobian(fitted.state.alpha, pd);
    MatrixXd cov = F * parts.vartheta_cov * F.transpose();
    return 0.5 * (cov + cov.transpose()).eval();
}

// ---------------------------------------------------------------------------
// Subsetting, intervals, regions
// ---------------------------------------------------------------------------

// Rows/cols of theta_cov for (beta_{s1..sq}, rho); subset holds 0-based
// response indices.
inline MatrixXd extract_theta_cov(const MatrixXd& theta_cov, const std::vector<int>& subset,
                                  int p, int d, int K) {
    const int q = static_cast<int>(subset.size());
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(q) * d + K);
    for (int s : subset) {
        if (s < 0 || s >= p) throw InvalidInputError("subset index out of range");
        for (int l = 0; l < d; ++l) idx.push_back(s * d + l);
    }
    for (int k = 0; k < K; ++k) idx.push_back(p * d + k);
    MatrixXd out(idx.size(), idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = 0; b < idx.size(); ++b)
            out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                theta_cov(idx[a], idx[b]);
    return out;
}

struct WaldRow {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool excludes_zero = false;
};

struct InferenceResult {
    std::vector<int> subset;  // 0-based response indices in S
    MatrixXd theta_cov;       // full (pd+K) covariance of (beta, rho)
    MatrixXd theta_cov_S;     // (qd+K) covariance of (beta_S, rho)
    MatrixXd v_beta_S;        // qd x qd block
    MatrixXd v_rho;           // K x K block
    std::vector<WaldRow> wald;
    double level = 0.95;
};

inline std::vector<WaldRow> wald_intervals(const FitResult& fitted, const MatrixXd& theta_cov,
                                           double level) {
    if (!(level > 0.0 && level < 1.0)) throw InvalidInputError("wald_intervals: level in (0,1)");
    const int p = static_cast<int>(fitted.state.beta.rows());
    const int d = static_cast<int>(fitted.state.beta.cols());
    const int K = static_cast<int>(fitted.state.rho.size());
    const double z = normal_quantile(0.5 * (1.0 + level));
    std::vector<WaldRow> rows;
    rows.reserve(static_cast<std::size_t>(p) * d + K);
    auto push = [&](std::string name, double est, double var) {
        WaldRow r;
        r.name = std::move(name);
        r.estimate = est;
        r.se = var > 0.0 ? std::sqrt(var) : 0.0;
        r.lower = est - z * r.se;
        r.upper = est + z * r.se;
        r.excludes_zero = r.lower > 0.0 || r.upper < 0.0;
        rows.push_back(std::move(r));
    };
    for (int j = 0; j < p; ++j)
        for (int l = 0; l < d; ++l)
            push("beta[" + std::to_string(j + 1) + "][" + std::to_string(l + 1) + "]",
                 fitted.state.beta(j, l), theta_cov(j * d + l, j * d + l));
    for (int k = 0; k < K; ++k)
        push("rho[" + std::to_string(k + 1) + "]", fitted.state.rho(k),
             theta_cov(p * d + k, p * d + k));
    return rows;
}

inline InferenceResult make_inference(const ModelSpec& spec, const Dataset& ds,
                                      const FitResult& fitted, const SandwichParts& parts,
                                      const std::vector<int>& subset, double level) {
    InferenceResult inf;
    inf.subset = subset;
    inf.level = level;
    inf.theta_cov = delta_to_theta(parts, fitted);
    inf.theta_cov_S = extract_theta_cov(inf.theta_cov, subset, ds.p(), ds.d(), ds.K());
    const int qd = static_cast<int>(subset.size()) * ds.d();
    inf.v_beta_S = inf.theta_cov_S.topLeftCorner(qd, qd);
    inf.v_rho = inf.theta_cov_S.bottomRightCorner(ds.K(), ds.K());
    inf.wald = wald_intervals(fitted, inf.theta_cov, level);
    return inf;
}

struct RegionStatistic {
    double stat_beta = 0.0;
    int df_beta = 0;
    double stat_rho = 0.0;
    int df_rho = 0;
};

// Quadratic forms against hypothesized values for the subset mean block and
// the correlation block.
inline RegionStatistic region_statistic(const FitResult& fitted, const InferenceResult& inf,
                                        const VectorXd& beta0_S, const VectorXd& rho0, int d) {
    RegionStatistic out;
    const int q = static_cast<int>(inf.subset.size());
    const int qd = q * d;
    const int K = static_cast<int>(rho0.size());
    if (beta0_S.size() != qd) throw InvalidInputError("region_statistic: beta0_S length mismatch");

    VectorXd beta_S(qd);
    for (int a = 0; a < q; ++a)
        beta_S.segment(a * d, d) = fitted.state.beta.row(inf.subset[static_cast<std::size_t>(a)]).transpose();

    Eigen::LLT<MatrixXd> llt_b(inf.v_beta_S);
    if (llt_b.info() != Eigen::Success)
        throw Error("region_statistic: V_beta_S block is singular");
    const VectorXd db = beta_S - beta0_S;
    out.stat_beta = db.dot(llt_b.solve(db));
    out.df_beta = qd;

    if (K > 0) {
        Eigen::LLT<MatrixXd> llt_r(inf.v_rho);
        if (llt_r.info() != Eigen::Success)
            throw Error("region_statistic: V_rho block is singular");
        const VectorXd dr = fitted.state.rho - rho0;
        out.stat_rho = dr.dot(llt_r.solve(dr));
        out.df_rho = K;
    }
    return out;
}

} // namespace jmcr
