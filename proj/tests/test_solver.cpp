#include <catch2/catch_amalgamated.hpp>

#include "jmcr/solver.hpp"
#include "jmcr/stats.hpp"
#include "oracle_dense.hpp"

using namespace jmcr;

namespace {

Dataset compound_symmetry_dataset(int n, int p, double c) {
    Dataset ds;
    ds.X = MatrixXd::Ones(n, 1);
    ds.Y = MatrixXd::Zero(n, p);
    MatrixXd W = MatrixXd::Constant(p, p, c);
    W.diagonal().setZero();
    ds.basis.push_back(W);
    return ds;
}

} // namespace

TEST_CASE("one Fisher step lands on least squares for the closed-form case") {
    Rng rng(51);
    const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 30, 3, 2, 0);
    const WorkingCov wc = working_cov(si.ds.basis, si.state.alpha, 3);

    ParameterState start = si.state;
    start.beta.setConstant(5.0);  // arbitrary start
    const MatrixXd stepped = update_beta(si.spec, si.ds, start, wc, 1.0);
    MatrixXd ols(3, 2);
    for (int j = 0; j < 3; ++j)
        ols.row(j) =
            (si.ds.X.transpose() * si.ds.X).ldlt().solve(si.ds.X.transpose() * si.ds.Y.col(j)).transpose();
    CHECK((stepped - ols).cwiseAbs().maxCoeff() < 1e-9);

    // At the root the step is a fixed point.
    ParameterState at_root = si.state;
    at_root.beta = ols;
    const MatrixXd again = update_beta(si.spec, si.ds, at_root, wc, 1.0);
    CHECK((again - ols).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("score norm decreases along Fisher scoring iterations") {
    Rng rng(53);
    const auto si = oracle::random_instance(rng, Link::Log, VarianceFamily::Proportional, 200, 5, 3, 0);
    const auto dense = oracle::make_dense(si.spec, si.ds);
    const WorkingCov wc = working_cov(si.ds.basis, si.state.alpha, 5);

    ParameterState st = si.state;
    st.beta.setZero();
    double prev_norm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 5; ++it) {
        Eigen::VectorXd beta_vec(5 * 3);
        for (int j = 0; j < 5; ++j)
            for (int l = 0; l < 3; ++l) beta_vec(j * 3 + l) = st.beta(j, l);
        const double norm = dense.psi_beta(beta_vec, st.alpha, st.phi).norm();
        CHECK(norm < prev_norm);
        prev_norm = norm;
        st.beta = update_beta(si.spec, si.ds, st, wc, 1.0);
    }
}

TEST_CASE("closed-form alpha") {
    SECTION("pooled mean square at K = 0") {
        Rng rng(59);
        const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 9, 3, 1, 0);
        const auto ev = evaluate_model(si.spec, si.ds, si.state);
        const VectorXd alpha = solve_alpha_unconstrained(si.ds, ev.eps, trace_gram(si.ds));
        CHECK(alpha(0) == Catch::Approx(ev.eps.squaredNorm() / (9.0 * 3.0)).epsilon(1e-12));
    }

    SECTION("identity outer products give alpha = e_0") {
        Dataset ds = compound_symmetry_dataset(4, 2, 1.0);
        // eps rows (1,1),(1,-1),... average outer product I_2.
        MatrixXd eps(4, 2);
        eps << 1, 1, 1, -1, 1, 1, 1, -1;
        const VectorXd alpha = solve_alpha_unconstrained(ds, eps, trace_gram(ds));
        CHECK(alpha(0) == Catch::Approx(1.0));
        CHECK(std::abs(alpha(1)) < 1e-12);
    }

    SECTION("random instance matches an explicit dense solve") {
        Rng rng(61);
        const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 2, 3, 1, 1);
        const auto ev = evaluate_model(si.spec, si.ds, si.state);
        const VectorXd alpha = solve_alpha_unconstrained(si.ds, ev.eps, trace_gram(si.ds));
        // Dense reference with the Kronecker-expanded basis matrices.
        const auto dense = oracle::make_dense(si.spec, si.ds);
        Eigen::MatrixXd gram(2, 2);
        Eigen::VectorXd v(2);
        Eigen::VectorXd epsv(6);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) epsv(i * 3 + j) = ev.eps(i, j);
        for (int k1 = 0; k1 < 2; ++k1) {
            const auto Wk1 = dense.w_tilde(k1);
            v(k1) = epsv.dot(Wk1 * epsv);
            for (int k2 = 0; k2 < 2; ++k2) gram(k1, k2) = (Wk1 * dense.w_tilde(k2)).trace();
        }
        const Eigen::VectorXd ref = gram.fullPivLu().solve(v);
        CHECK((alpha - ref).cwiseAbs().maxCoeff() < 1e-10);
    }

    SECTION("linearly dependent basis is diagnosed") {
        Dataset ds = compound_symmetry_dataset(3, 3, 1.0);
        ds.basis.push_back(2.0 * ds.basis[0]);
        MatrixXd eps = MatrixXd::Ones(3, 3);
        CHECK_THROWS_AS(solve_alpha_unconstrained(ds, eps, trace_gram(ds)), CollinearBasisError);
    }
}

TEST_CASE("parameter space check on the classic structures") {
    SECTION("identity") {
        const auto chk = check_A_plus(VectorXd::Ones(1), {}, 4);
        CHECK(chk.inside);
        CHECK(chk.min_eig == Catch::Approx(1.0));
    }

    SECTION("compound symmetry, p = 4, c = 1") {
        Dataset ds = compound_symmetry_dataset(2, 4, 1.0);
        VectorXd alpha(2);
        alpha << 1.0, 0.99;
        CHECK(check_A_plus(alpha, ds.basis, 4).inside);
        alpha(1) = 1.01;
        CHECK_FALSE(check_A_plus(alpha, ds.basis, 4).inside);
        alpha(1) = -1.0 / 3.0 + 0.01;
        CHECK(check_A_plus(alpha, ds.basis, 4).inside);
        alpha(1) = -1.0 / 3.0 - 0.01;
        CHECK_FALSE(check_A_plus(alpha, ds.basis, 4).inside);
    }

    SECTION("tridiagonal, p = 3, c = 1") {
        Dataset ds;
        ds.X = MatrixXd::Ones(2, 1);
        ds.Y = MatrixXd::Zero(2, 3);
        MatrixXd W = MatrixXd::Zero(3, 3);
        W(0, 1) = W(1, 0) = W(1, 2) = W(2, 1) = 1.0;
        ds.basis.push_back(W);
        VectorXd alpha(2);
        alpha << 1.0, 0.7;
        CHECK(check_A_plus(alpha, ds.basis, 3).inside);  // bound ~0.70711
        alpha(1) = 0.72;
        CHECK_FALSE(check_A_plus(alpha, ds.basis, 3).inside);
    }
}

TEST_CASE("eigenvalue clip raises only the low spectrum") {
    MatrixXd m(2, 2);
    // Symmetric with eigenvalues 2 and -0.5.
    Eigen::Matrix2d V;
    const double c = std::cos(0.3), s = std::sin(0.3);
    V << c, -s, s, c;
    Eigen::Vector2d ev(2.0, -0.5);
    m = V * ev.asDiagonal() * V.transpose();
    const MatrixXd clipped = clip_eigenvalues(m, 1e-4);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(clipped);
    CHECK(es.eigenvalues()(0) == Catch::Approx(1e-4));
    CHECK(es.eigenvalues()(1) == Catch::Approx(2.0));
}

TEST_CASE("constrained alpha solve") {
    SolverConfig cfg;

    SECTION("interior case reproduces the closed form") {
        Rng rng(67);
        const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 40, 4, 1, 1);
        const auto ev = evaluate_model(si.spec, si.ds, si.state);
        const TraceGram tg = trace_gram(si.ds);
        const VectorXd unc = solve_alpha_unconstrained(si.ds, ev.eps, tg);
        REQUIRE(check_A_plus(unc, si.ds.basis, 4).min_eig > cfg.nu);
        const AdmmResult admm = solve_alpha_admm(si.ds, ev.eps, tg, cfg, cfg.nu);
        CHECK((admm.alpha - unc).cwiseAbs().maxCoeff() < 1e-6);
    }

    SECTION("engineered boundary case stays valid and matches a grid search") {
        // Nearly rank-one residuals force the closed form outside the PD
        // space for a compound symmetry basis.
        const int n = 30, p = 4;
        Dataset ds = compound_symmetry_dataset(n, p, 1.0);
        Rng rng(71);
        MatrixXd eps(n, p);
        for (int i = 0; i < n; ++i) {
            const double base = rng.normal();
            for (int j = 0; j < p; ++j) eps(i, j) = base + 0.05 * rng.normal();
        }
        const TraceGram tg = trace_gram(ds);
        const VectorXd unc = solve_alpha_unconstrained(ds, eps, tg);
        REQUIRE(unc(1) / unc(0) > 1.0);  // outside P+ for c = 1
        REQUIRE_FALSE(check_A_plus(unc, ds.basis, p).inside);

        const AdmmResult admm = solve_alpha_admm(ds, eps, tg, cfg, cfg.nu, &unc);
        const double rho_hat = admm.alpha(1) / admm.alpha(0);
        CHECK(rho_hat > -1.0 / 3.0);
        CHECK(rho_hat < 1.0);
        CHECK(check_A_plus(admm.alpha, ds.basis, p).min_eig > 0.0);

        // 1-D grid over the feasible interval with the scale profiled out.
        const MatrixXd sample_cov = eps.transpose() * eps / n;
        auto q_of = [&](const VectorXd& alpha) {
            MatrixXd sigma = alpha(0) * MatrixXd::Identity(p, p) + alpha(1) * ds.basis[0];
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const MatrixXd diff = eps.row(i).transpose() * eps.row(i) - sigma;
                acc += diff.squaredNorm();
            }
            return acc;
        };
        double best = std::numeric_limits<double>::infinity();
        for (int g = 1; g < 4000; ++g) {
            const double rho = -1.0 / 3.0 + g * (1.0 + 1.0 / 3.0) / 4000.0;
            MatrixXd sigma_u = MatrixXd::Identity(p, p) + rho * ds.basis[0];
            double denom = n * sigma_u.squaredNorm();
            double numer = 0.0;
            for (int i = 0; i < n; ++i)
                numer += (eps.row(i) * sigma_u * eps.row(i).transpose())(0, 0);
            const double a0 = numer / denom;
            if (a0 <= 0.0) continue;
            VectorXd alpha(2);
            alpha << a0, a0 * rho;
            if (check_A_plus(alpha, ds.basis, p).min_eig <= 0.0) continue;
            best = std::min(best, q_of(alpha));
        }
        CHECK(q_of(admm.alpha) <= best + 1e-4);

        // Primal residual settles monotonically after burn-in.
        const auto& hist = admm.primal_history;
        REQUIRE(hist.size() >= 5);
        for (std::size_t t = hist.size() / 2; t + 1 < hist.size(); ++t)
            CHECK(hist[t + 1] <= hist[t] * (1.0 + 1e-9));
    }
}

TEST_CASE("dispersion updates") {
    ModelSpec s;
    s.link = Link::Identity;
    s.variance = VarianceFamily::Constant;
    s.n = 50;
    s.p = 2;
    s.d = 1;
    s.K = 0;
    SolverConfig cfg;
    Rng rng(73);
    Dataset ds;
    ds.X = MatrixXd::Ones(50, 1);
    ds.Y.resize(50, 2);
    for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 2; ++j) ds.Y(i, j) = 2.0 + rng.normal();
    const MatrixXd mu = MatrixXd::Constant(50, 2, 2.0);

    SECTION("constant family is the mean squared residual") {
        const auto du = update_dispersion(s, ds, mu, cfg);
        for (int j = 0; j < 2; ++j)
            CHECK(du.phi(j) == Catch::Approx((ds.Y.col(j).array() - 2.0).square().mean()));
    }

    SECTION("proportional family divides by the mean") {
        ModelSpec sp = s;
        sp.link = Link::Log;
        sp.variance = VarianceFamily::Proportional;
        const auto du = update_dispersion(sp, ds, mu, cfg);
        for (int j = 0; j < 2; ++j)
            CHECK(du.phi(j) ==
                  Catch::Approx(((ds.Y.col(j).array() - 2.0).square() / 2.0).mean()));
    }

    SECTION("quadratic family root satisfies the moment equation") {
        ModelSpec sq = s;
        sq.link = Link::Log;
        sq.variance = VarianceFamily::Quadratic;
        // Inflate the residuals so a positive root exists.
        Dataset big = ds;
        big.Y = mu + 3.0 * (ds.Y - mu);
        const auto du = update_dispersion(sq, big, mu, cfg);
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int i = 0; i < 50; ++i) {
                const double r = big.Y(i, j) - 2.0;
                acc += r * r / (2.0 + du.phi(j) * 4.0);
            }
            CHECK(acc / 50.0 == Catch::Approx(1.0).epsilon(1e-8));

            // Independent coarse-to-fine bisection oracle.
            auto f = [&](double phi) {
                double a = 0.0;
                for (int i = 0; i < 50; ++i) {
                    const double r = big.Y(i, j) - 2.0;
                    a += r * r / (2.0 + phi * 4.0);
                }
                return a / 50.0 - 1.0;
            };
            double lo = 1e-8, hi = 1e8;
            for (int it = 0; it < 100; ++it) {
                const double mid = 0.5 * (lo + hi);
                (f(mid) > 0 ? lo : hi) = mid;
            }
            CHECK(du.phi(j) == Catch::Approx(0.5 * (lo + hi)).margin(1e-8));
        }
    }

    SECTION("no positive root returns the floor with a flag") {
        ModelSpec sq = s;
        sq.link = Link::Log;
        sq.variance = VarianceFamily::Quadratic;
        Dataset tiny = ds;
        tiny.Y = mu + 0.01 * (ds.Y - mu);  // residuals far below the mean
        const auto du = update_dispersion(sq, tiny, mu, cfg);
        CHECK(du.at_boundary);
        CHECK(du.phi.minCoeff() == Catch::Approx(cfg.phi_min));
    }
}

TEST_CASE("full fit on the closed-form case") {
    Rng rng(79);
    const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 60, 4, 2, 0);
    SolverConfig cfg;
    cfg.estimate_phi = false;
    const FitResult fr = fit(si.ds, si.spec, cfg);
    REQUIRE(fr.converged);
    CHECK(fr.outer_iters <= 3);
    MatrixXd ols(4, 2);
    for (int j = 0; j < 4; ++j)
        ols.row(j) =
            (si.ds.X.transpose() * si.ds.X).ldlt().solve(si.ds.X.transpose() * si.ds.Y.col(j)).transpose();
    CHECK((fr.state.beta - ols).cwiseAbs().maxCoeff() < 1e-8);
    const MatrixXd resid = si.ds.Y - si.ds.X * ols.transpose();
    CHECK(fr.state.alpha(0) == Catch::Approx(resid.squaredNorm() / (60.0 * 4.0)).epsilon(1e-8));
}

TEST_CASE("converged fits satisfy the fixed-point conditions") {
    Rng rng(83);
    auto si = oracle::random_instance(rng, Link::Log, VarianceFamily::Proportional, 120, 4, 2, 1);
    // Turn the synthetic responses into counts so the fit is well posed.
    for (int i = 0; i < 120; ++i)
        for (int j = 0; j < 4; ++j) si.ds.Y(i, j) = std::round(std::max(si.ds.Y(i, j), 0.0));
    SolverConfig cfg;
    cfg.estimate_phi = false;
    const FitResult fr = fit(si.ds, si.spec, cfg);
    REQUIRE(fr.converged);
    // Scale-free restatement: the Newton steps implied by the final scores
    // must be an order of magnitude below the outer tolerance times scale.
    const ModelEval ev = evaluate_model(si.spec, si.ds, fr.state);
    const WorkingCov wc = working_cov(si.ds.basis, fr.state.alpha, 4);
    const MatrixXd J = fisher_info_eval(si.ds, ev, wc);
    const VectorXd step = (-J).llt().solve(psi_beta_eval(si.ds, ev, wc));
    CHECK(step.cwiseAbs().maxCoeff() <
          10.0 * cfg.tol_outer * (1.0 + fr.state.beta.cwiseAbs().maxCoeff()));
    const TraceGram tg = trace_gram(si.ds);
    const VectorXd alpha_step = tg.M.ldlt().solve(psi_alpha_eval(si.ds, ev, tg, fr.state.alpha));
    CHECK(alpha_step.cwiseAbs().maxCoeff() <
          10.0 * cfg.tol_outer * (1.0 + fr.state.alpha.cwiseAbs().maxCoeff()));
    // Output validity: R(rho_hat) admits a Cholesky factorization.
    MatrixXd R = MatrixXd::Identity(4, 4) + fr.state.rho(0) * si.ds.basis[0];
    CHECK(Eigen::LLT<MatrixXd>(R).info() == Eigen::Success);
    CHECK(R.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("fit is bit-identical across runs and thread counts") {
    Rng rng(89);
    auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 80, 5, 2, 2);
    SolverConfig cfg;
    set_thread_count(1);
    const FitResult f1 = fit(si.ds, si.spec, cfg);
    set_thread_count(3);
    const FitResult f2 = fit(si.ds, si.spec, cfg);
    set_thread_count(0);
    CHECK(f1.state.beta == f2.state.beta);
    CHECK(f1.state.alpha == f2.state.alpha);
    CHECK(f1.state.phi == f2.state.phi);
    CHECK(f1.outer_iters == f2.outer_iters);
}

TEST_CASE("fit refuses an invalid similarity basis") {
    Rng rng(97);
    auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 10, 3, 1, 1);
    si.ds.basis[0](0, 0) = 1.0;  // nonzero diagonal
    CHECK_THROWS_AS(fit(si.ds, si.spec, SolverConfig{}), InvalidInputError);
}
