#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "jmcr/estimating_equations.hpp"
#include "jmcr/model.hpp"
#include "jmcr/similarity.hpp"

namespace jmcr {

struct SolverConfig {
    double gamma = 1.0;          // Fisher scoring step size in (0, 1]
    double nu = 1e-4;            // eigenvalue floor for the constrained alpha step
    double tol_outer = 1e-6;     // relative parameter-change tolerance
    double tol_admm = 1e-6;      // primal/dual residual tolerance
    int max_outer = 200;
    int max_admm = 2000;
    int max_inner_beta = 50;
    // Penalty weight of the augmented Lagrangian, expressed relative to the
    // curvature of the least squares objective (2n in Gram units), so the
    // iteration behaves the same at every sample size.
    double admm_penalty = 1.0;
    bool adaptive_penalty = false;  // residual-balancing rescale, off by default
    bool estimate_phi = true;
    bool update_phi_every_iter = true;
    double phi_min = 1e-8;
    double phi_max = 1e8;
    // When set, alpha is held at this value and never updated (e.g. a fixed
    // independence working correlation).
    std::optional<VectorXd> fixed_alpha;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInputError("SolverConfig: gamma in (0,1]");
        if (!(nu > 0.0)) throw InvalidInputError("SolverConfig: nu must be positive");
        if (!(tol_outer > 0.0 && tol_admm > 0.0))
            throw InvalidInputError("SolverConfig: tolerances must be positive");
        if (max_outer < 1 || max_admm < 1 || max_inner_beta < 1)
            throw InvalidInputError("SolverConfig: iteration caps must be positive");
    }
};

struct FitResult {
    ParameterState state;
    bool converged = false;
    int outer_iters = 0;
    int admm_invocations = 0;
    double psi_beta_inf = 0.0;   // final sup-norm of the beta score
    double psi_alpha_inf = 0.0;  // final sup-norm of the alpha score
    double min_eig = 0.0;        // smallest eigenvalue of Sigma(alpha_hat)
    std::int64_t clamp_count = 0;
    bool phi_at_boundary = false;
    // True when the closed-form alpha was inside the PD space on the last
    // outer iteration (no constrained solve needed).
    bool last_alpha_unconstrained_inside = true;
};

// ---------------------------------------------------------------------------
// Parameter space check
// ---------------------------------------------------------------------------

struct SpaceCheck {
    bool inside = false;
    double min_eig = 0.0;
};

// alpha is inside the PD space when the smallest eigenvalue of Sigma(alpha)
// clears a tolerance relative to the spectral norm.
inline SpaceCheck check_A_plus(const VectorXd& alpha, const std::vector<MatrixXd>& basis, int p) {
    const MatrixXd sigma = sigma_of_alpha(basis, alpha, p);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    const double scale = std::max(std::abs(lo), std::abs(hi));
    return SpaceCheck{lo > 1e-12 * std::max(scale, 1.0), lo};
}

// ---------------------------------------------------------------------------
// Beta update (Fisher scoring)
// ---------------------------------------------------------------------------

namespace detail {

// Solve (-J) x = psi with one diagonal-jitter retry before giving up.
inline VectorXd solve_information(const MatrixXd& J, const VectorXd& psi) {
    MatrixXd neg = -J;
    Eigen::LLT<MatrixXd> llt(neg);
    if (llt.info() != Eigen::Success) {
        const double jitter = 1e-8 * neg.diagonal().mean();
        neg.diagonal().array() += jitter;
        llt.compute(neg);
        if (llt.info() != Eigen::Success)
            throw SingularInformationError(
                "Fisher information is singular even after diagonal jitter; "
                "consider fewer covariates or responses");
    }
    return llt.solve(psi);
}

inline MatrixXd unstack_beta(const VectorXd& v, int p, int d) {
    MatrixXd beta(p, d);
    for (int j = 0; j < p; ++j) beta.row(j) = v.segment(j * d, d).transpose();
    return beta;
}

inline VectorXd stack_beta(const MatrixXd& beta) {
    const int p = static_cast<int>(beta.rows()), d = static_cast<int>(beta.cols());
    VectorXd v(p * d);
    for (int j = 0; j < p; ++j) v.segment(j * d, d) = beta.row(j).transpose();
    return v;
}

} // namespace detail

// One Fisher scoring step at fixed alpha, with step halving whenever the
// beta score norm would increase. Returns the new beta.
inline MatrixXd update_beta(const ModelSpec& spec, const Dataset& ds, const ParameterState& state,
                            const WorkingCov& wc, double gamma, std::int64_t* clamp_count = nullptr) {
    const int p = ds.p(), d = ds.d();
    ModelEval ev = evaluate_model(spec, ds, state);
    if (clamp_count) *clamp_count += ev.clamp_count;
    const VectorXd psi = psi_beta_eval(ds, ev, wc);
    const MatrixXd J = fisher_info_eval(ds, ev, wc);
    const VectorXd direction = detail::solve_information(J, psi);
    const double psi_norm = psi.norm();

    ParameterState trial = state;
    double step = gamma;
    for (int half = 0; half < 30; ++half) {
        trial.beta = state.beta + step * detail::unstack_beta(direction, p, d);
        ModelEval trial_ev = evaluate_model(spec, ds, trial);
        const double trial_norm = psi_beta_eval(ds, trial_ev, wc).norm();
        if (trial_norm <= psi_norm || psi_norm == 0.0) break;
        step *= 0.5;
    }
    return trial.beta;
}

namespace detail {

// Fisher scoring to convergence at fixed alpha.
inline void beta_inner_loop(const ModelSpec& spec, const Dataset& ds, ParameterState& state,
                            const WorkingCov& wc, const SolverConfig& cfg,
                            std::int64_t* clamp_count) {
    for (int it = 0; it < cfg.max_inner_beta; ++it) {
        const MatrixXd next = update_beta(spec, ds, state, wc, cfg.gamma, clamp_count);
        const double change =
            (next - state.beta).cwiseAbs().maxCoeff() / (1.0 + state.beta.cwiseAbs().maxCoeff());
        state.beta = next;
        if (change < cfg.tol_outer) break;
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Alpha updates
// ---------------------------------------------------------------------------

// Closed-form root of the alpha score: TraceGram^{-1} (eps' W_k eps)_k.
inline VectorXd solve_alpha_unconstrained(const Dataset& ds, const MatrixXd& eps,
                                          const TraceGram& tg) {
    const VectorXd v = basis_quadratic_forms(ds.basis, eps);
    Eigen::FullPivLU<MatrixXd> lu(tg.M);
    if (!lu.isInvertible()) {
        // Name one matrix involved in the dependency from the Gram kernel.
        const MatrixXd kernel = lu.kernel();
        int worst = 0;
        kernel.col(0).cwiseAbs().maxCoeff(&worst);
        throw CollinearBasisError("similarity basis is linearly dependent (W_" +
                                  std::to_string(worst) + " lies in the span of the others, "
                                  "counting W_0 = I)");
    }
    return lu.solve(v);
}

// Symmetric eigenvalue clip: every eigenvalue below `floor` is raised to it.
inline MatrixXd clip_eigenvalues(const MatrixXd& m, double floor_value) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
    VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor_value);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

struct AdmmResult {
    VectorXd alpha;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    std::vector<double> primal_history;
};

// Constrained least squares solve of the correlation-score objective over the
// PD space, by alternating direction: a linear solve in alpha, an eigenvalue
// clip of the split variable at the floor `nu_floor`, and a dual ascent.
inline AdmmResult solve_alpha_admm(const Dataset& ds, const MatrixXd& eps, const TraceGram& tg,
                                   const SolverConfig& cfg, double nu_floor,
                                   const VectorXd* warm_start = nullptr) {
    const int p = ds.p();
    const double n = static_cast<double>(ds.n());
    const MatrixXd G = tg.per_cluster(ds.n());
    const Eigen::LDLT<MatrixXd> gram(G);
    const MatrixXd sample_cov = eps.transpose() * eps / n;  // mean of eps_i eps_i'

    const int K = ds.K();
    VectorXd c_sample(K + 1);
    c_sample(0) = sample_cov.trace();
    for (int k = 0; k < K; ++k)
        c_sample(k + 1) = sample_cov.cwiseProduct(ds.basis[static_cast<std::size_t>(k)]).sum();

    VectorXd alpha = warm_start ? *warm_start : gram.solve(c_sample).eval();
    double tau = cfg.admm_penalty * 2.0 * n;

    MatrixXd sigma = sigma_of_alpha(ds.basis, alpha, p);
    MatrixXd delta = clip_eigenvalues(sigma, nu_floor);
    MatrixXd dual = MatrixXd::Zero(p, p);  // scaled dual variable
    std::vector<double> history;
    history.reserve(64);

    AdmmResult res;
    for (int it = 1; it <= cfg.max_admm; ++it) {
        // alpha-step: (2n + tau) G alpha = 2n c_sample + tau c_target
        const MatrixXd target = delta - dual;
        VectorXd c_target(K + 1);
        c_target(0) = target.trace();
        for (int k = 0; k < K; ++k)
            c_target(k + 1) = target.cwiseProduct(ds.basis[static_cast<std::size_t>(k)]).sum();
        alpha = gram.solve((2.0 * n * c_sample + tau * c_target) / (2.0 * n + tau));
        sigma = sigma_of_alpha(ds.basis, alpha, p);

        // delta-step: project Sigma(alpha) + dual onto {min eigenvalue >= nu}
        const MatrixXd delta_prev = delta;
        delta = clip_eigenvalues(sigma + dual, nu_floor);

        const double primal = (sigma - delta).norm();
        const double dual_res = tau * (delta - delta_prev).norm();
        dual += sigma - delta;
        history.push_back(primal);

        const double eps_pri = p * cfg.tol_admm + cfg.tol_admm * std::max(sigma.norm(), delta.norm());
        const double eps_dual = p * cfg.tol_admm + cfg.tol_admm * tau * dual.norm();
        if (primal <= eps_pri && dual_res <= eps_dual) {
            res.alpha = alpha;
            res.iterations = it;
            res.primal_residual = primal;
            res.dual_residual = dual_res;
            res.primal_history = std::move(history);
            return res;
        }
        if (cfg.adaptive_penalty) {
            if (primal > 10.0 * dual_res) {
                tau *= 2.0;
                dual *= 0.5;
            } else if (dual_res > 10.0 * primal) {
                tau *= 0.5;
                dual *= 2.0;
            }
        }
    }
    throw NonConvergenceError("ADMM did not converge within " + std::to_string(cfg.max_admm) +
                                  " iterations",
                              std::move(history));
}

// ---------------------------------------------------------------------------
// Dispersion update
// ---------------------------------------------------------------------------

struct DispersionUpdate {
    VectorXd phi;
    bool at_boundary = false;
};

// Per response, phi_j solves mean_i (Y_ij - mu_ij)^2 / h(mu_ij; phi_j) = 1.
// Closed form when h is multiplicative in phi; a safeguarded monotone
// root-solve for the quadratic family.
inline DispersionUpdate update_dispersion(const ModelSpec& spec, const Dataset& ds,
                                          const MatrixXd& mu, const SolverConfig& cfg) {
    const int n = ds.n(), p = ds.p();
    DispersionUpdate out;
    out.phi.resize(p);
    for (int j = 0; j < p; ++j) {
        double phi_j;
        switch (spec.variance) {
            case VarianceFamily::Constant: {
                phi_j = (ds.Y.col(j) - mu.col(j)).squaredNorm() / n;
                break;
            }
            case VarianceFamily::Proportional: {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double m = std::max(mu(i, j), kMeanFloor);
                    const double r = ds.Y(i, j) - mu(i, j);
                    acc += r * r / m;
                }
                phi_j = acc / n;
                break;
            }
            case VarianceFamily::Binary: {
                double acc = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double m = std::min(std::max(mu(i, j), kMeanFloor), 1.0 - kMeanFloor);
                    const double r = ds.Y(i, j) - mu(i, j);
                    acc += r * r / (m * (1.0 - m));
                }
                phi_j = acc / n;
                break;
            }
            case VarianceFamily::Quadratic: {
                // f(phi) = mean r^2/(mu + phi mu^2) - 1 is strictly decreasing.
                auto moment = [&](double phi) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double m = std::max(mu(i, j), kMeanFloor);
                        const double r = ds.Y(i, j) - mu(i, j);
                        acc += r * r / (m + phi * m * m);
                    }
                    return acc / n - 1.0;
                };
                double lo = cfg.phi_min, hi = cfg.phi_max;
                const double f_lo = moment(lo);
                if (f_lo <= 0.0) {
                    phi_j = cfg.phi_min;
                    out.at_boundary = true;
                    break;
                }
                if (moment(hi) >= 0.0) {
                    phi_j = cfg.phi_max;
                    out.at_boundary = true;
                    break;
                }
                for (int it = 0; it < 200 && (hi - lo) > 1e-12 * (1.0 + hi); ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (moment(mid) > 0.0 ? lo : hi) = mid;
                }
                phi_j = 0.5 * (lo + hi);
                break;
            }
        }
        out.phi(j) = std::max(phi_j, cfg.phi_min);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full fit
// ---------------------------------------------------------------------------

namespace detail {

// Starting values: zero slopes, intercept chosen so the fitted mean matches
// the column mean through the link.
inline MatrixXd initial_beta(const ModelSpec& spec, const Dataset& ds) {
    MatrixXd beta = MatrixXd::Zero(ds.p(), ds.d());
    for (int j = 0; j < ds.p(); ++j) {
        const double m = ds.Y.col(j).mean();
        switch (spec.link) {
            case Link::Identity: beta(j, 0) = m; break;
            case Link::Log: beta(j, 0) = std::log(std::max(m, 0.1)); break;
            case Link::Logit: {
                const double c = std::min(std::max(m, 0.02), 0.98);
                beta(j, 0) = std::log(c / (1.0 - c));
                break;
            }
        }
    }
    return beta;
}

inline double rel_change(double new_value, double old_value) {
    return std::abs(new_value - old_value) / (1.0 + std::abs(old_value));
}

} // namespace detail

inline FitResult fit(const Dataset& ds, const ModelSpec& spec, const SolverConfig& cfg) {
    cfg.validate();
    validate_dataset(ds, spec);
    {
        SimilarityBasis basis{ds.basis, {}};
        const auto violations = validate_basis(basis);
        if (!violations.empty())
            throw InvalidInputError("fit: similarity basis failed validation: W_" +
                                    std::to_string(violations.front().matrix_index + 1) + " " +
                                    violations.front().what);
    }

    const int p = ds.p(), K = ds.K();
    const TraceGram tg = trace_gram(ds);

    FitResult res;
    ParameterState state = ParameterState::zero(p, ds.d(), K);
    state.beta = detail::initial_beta(spec, ds);
    if (cfg.fixed_alpha) {
        if (cfg.fixed_alpha->size() != K + 1)
            throw InvalidInputError("fit: fixed_alpha has the wrong length");
        state.alpha = *cfg.fixed_alpha;
    }
    state.sync_rho();

    // Independence start: solve the mean model at alpha = e_0 first.
    {
        VectorXd alpha0 = VectorXd::Zero(K + 1);
        alpha0(0) = 1.0;
        const WorkingCov wc = working_cov(ds.basis, cfg.fixed_alpha ? state.alpha : alpha0, p);
        detail::beta_inner_loop(spec, ds, state, wc, cfg, &res.clamp_count);
    }

    bool converged = false;
    int outer = 0;
    for (outer = 1; outer <= cfg.max_outer; ++outer) {
        const ParameterState prev = state;

        // Mean step at the current working correlation.
        const WorkingCov wc = working_cov(ds.basis, state.alpha, p);
        detail::beta_inner_loop(spec, ds, state, wc, cfg, &res.clamp_count);

        ModelEval ev = evaluate_model(spec, ds, state);

        // Correlation step: closed form first; the constrained solve only
        // runs when the closed form is outside the PD space or within nu of
        // its boundary (the floor scales with alpha_0 so the guarantee holds
        // on the correlation scale).
        if (!cfg.fixed_alpha) {
            const VectorXd alpha_unc = solve_alpha_unconstrained(ds, ev.eps, tg);
            const double scale = std::max(1.0, alpha_unc(0));
            const double nu_eff = cfg.nu * scale;
            const SpaceCheck chk = check_A_plus(alpha_unc, ds.basis, p);
            if (chk.inside && chk.min_eig > nu_eff) {
                state.alpha = alpha_unc;
                res.last_alpha_unconstrained_inside = true;
            } else {
                const AdmmResult admm = solve_alpha_admm(ds, ev.eps, tg, cfg, nu_eff, &alpha_unc);
                state.alpha = admm.alpha;
                ++res.admm_invocations;
                res.last_alpha_unconstrained_inside = false;
            }
            if (!(state.alpha(0) > 0.0))
                throw InvalidTransformError("fit: alpha_0 <= 0 after the correlation step");
            state.sync_rho();
        }

        // Dispersion step.
        if (cfg.estimate_phi && cfg.update_phi_every_iter) {
            const DispersionUpdate du = update_dispersion(spec, ds, ev.mu, cfg);
            state.phi = du.phi;
            res.phi_at_boundary = res.phi_at_boundary || du.at_boundary;
        }

        double change = 0.0;
        for (int j = 0; j < p; ++j)
            for (int l = 0; l < ds.d(); ++l)
                change = std::max(change, detail::rel_change(state.beta(j, l), prev.beta(j, l)));
        for (int k = 0; k < K; ++k)
            change = std::max(change, detail::rel_change(state.rho(k), prev.rho(k)));
        for (int j = 0; j < p; ++j)
            change = std::max(change, detail::rel_change(state.phi(j), prev.phi(j)));
        if (change < cfg.tol_outer) {
            converged = true;
            break;
        }
    }

    if (cfg.estimate_phi && !cfg.update_phi_every_iter) {
        const ModelEval ev = evaluate_model(spec, ds, state);
        const DispersionUpdate du = update_dispersion(spec, ds, ev.mu, cfg);
        state.phi = du.phi;
        res.phi_at_boundary = res.phi_at_boundary || du.at_boundary;
    }

    const ModelEval ev = evaluate_model(spec, ds, state);
    const WorkingCov wc = working_cov(ds.basis, state.alpha, p);
    res.state = state;
    res.converged = converged;
    res.outer_iters = std::min(outer, cfg.max_outer);
    res.psi_beta_inf = psi_beta_eval(ds, ev, wc).cwiseAbs().maxCoeff();
    res.psi_alpha_inf = psi_alpha_eval(ds, ev, tg, state.alpha).cwiseAbs().maxCoeff();
    res.min_eig = check_A_plus(state.alpha, ds.basis, p).min_eig;
    res.clamp_count += ev.clamp_count;
    return res;
}

} // namespace jmcr
