#include <catch2/catch_amalgamated.hpp>

#include "jmcr/inference.hpp"
#include "jmcr/stats.hpp"
#include "oracle_dense.hpp"

using namespace jmcr;

TEST_CASE("sandwich collapses to the classic heteroskedastic form") {
    // Gaussian, identity link, K = 0, phi fixed at one: the beta block of the
    // covariance must equal (X'X)^{-1} (sum x x' r^2) (X'X)^{-1} per response.
    Rng rng(101);
    const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 50, 3, 2, 0);
    SolverConfig cfg;
    cfg.estimate_phi = false;
    const FitResult fr = fit(si.ds, si.spec, cfg);
    REQUIRE(fr.converged);
    const SandwichParts parts = sandwich(si.spec, si.ds, fr);

    const MatrixXd xtx_inv = (si.ds.X.transpose() * si.ds.X).inverse();
    for (int j = 0; j < 3; ++j) {
        MatrixXd middle = MatrixXd::Zero(2, 2);
        for (int i = 0; i < 50; ++i) {
            const double r = si.ds.Y(i, j) - si.ds.X.row(i).dot(fr.state.beta.row(j));
            middle += si.ds.X.row(i).transpose() * si.ds.X.row(i) * r * r;
        }
        const MatrixXd robust = xtx_inv * middle * xtx_inv;
        // alpha_0 rescales the score identically in bread and meat, so the
        // sandwich is invariant to it.
        CHECK((parts.vartheta_cov.block(j * 2, j * 2, 2, 2) - robust).cwiseAbs().maxCoeff() <
              1e-8 * robust.cwiseAbs().maxCoeff());
    }
    CHECK((parts.Ghat_full - parts.Ghat_full.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(parts.meat_raw, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() > -1e-8 * parts.meat_raw.norm());
}

TEST_CASE("analytic bread matches complex-step and finite differences") {
    Rng rng(103);
    const struct {
        Link link;
        VarianceFamily variance;
    } menu[3] = {{Link::Identity, VarianceFamily::Constant},
                 {Link::Log, VarianceFamily::Proportional},
                 {Link::Log, VarianceFamily::Quadratic}};
    for (int t = 0; t < 6; ++t) {
        const auto& m = menu[t % 3];
        const auto si = oracle::random_instance(rng, m.link, m.variance, 4, 3, 2, 1);
        FitResult pseudo;
        pseudo.state = si.state;
        const SandwichParts parts = sandwich(si.spec, si.ds, pseudo);

        // Exact Jacobian via complex-step on the dense reference.
        const MatrixXd exact = oracle::score_jacobian_complex_step(si.spec, si.ds, si.state);
        const double scale = exact.cwiseAbs().maxCoeff();
        CHECK((parts.bread_raw - exact).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, scale));

        // Central finite differences of the blocked score as a second check.
        const int pd = 6, dim = pd + 2;
        auto stacked_psi = [&](const ParameterState& st) {
            VectorXd out(dim);
            out.head(pd) = psi_beta(si.spec, si.ds, st);
            out.tail(2) = psi_alpha(si.spec, si.ds, st);
            return out;
        };
        MatrixXd fd(dim, dim);
        for (int c = 0; c < dim; ++c) {
            ParameterState up = si.state, dn = si.state;
            const double h = 1e-6;
            if (c < pd) {
                up.beta(c / 2, c % 2) += h;
                dn.beta(c / 2, c % 2) -= h;
            } else {
                up.alpha(c - pd) += h;
                dn.alpha(c - pd) -= h;
            }
            fd.col(c) = (stacked_psi(up) - stacked_psi(dn)) / (2 * h);
        }
        const double rel =
            ((parts.bread_raw - fd).cwiseAbs().maxCoeff()) / std::max(1.0, fd.cwiseAbs().maxCoeff());
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("delta map Jacobian") {
    SECTION("unit alpha_0 leaves beta rows untouched and fills the ratio rows") {
        VectorXd alpha(3);
        alpha << 1.0, 0.3, -0.1;
        const MatrixXd F = delta_jacobian(alpha, 4);
        CHECK((F.topLeftCorner(4, 4) - MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
        CHECK(F(4, 4) == Catch::Approx(-0.3));
        CHECK(F(4, 5) == Catch::Approx(1.0));
        CHECK(F(5, 4) == Catch::Approx(0.1));
        CHECK(F(5, 6) == Catch::Approx(1.0));
    }

    SECTION("direct differentiation at alpha = (2, 1)") {
        VectorXd alpha(2);
        alpha << 2.0, 1.0;
        const MatrixXd F = delta_jacobian(alpha, 1);
        CHECK(F(1, 1) == Catch::Approx(-0.25));
        CHECK(F(1, 2) == Catch::Approx(0.5));
    }
}

TEST_CASE("delta Jacobian agrees with finite differences of the ratio map") {
    VectorXd alpha(4);
    alpha << 1.7, 0.4, -0.2, 0.05;
    const int pd = 3;
    const MatrixXd F = delta_jacobian(alpha, pd);
    auto f = [&](const VectorXd& a) {
        VectorXd out(pd + 3);
        out.head(pd).setZero();  // beta block is the identity map; test the ratios
        for (int k = 0; k < 3; ++k) out(pd + k) = a(k + 1) / a(0);
        return out;
    };
    for (int c = 0; c < 4; ++c) {
        VectorXd up = alpha, dn = alpha;
        const double h = 1e-7;
        up(c) += h;
        dn(c) -= h;
        const VectorXd fd = (f(up) - f(dn)) / (2 * h);
        for (int r = 0; r < 3; ++r) CHECK(F(pd + r, pd + c) == Catch::Approx(fd(pd + r)).margin(1e-8));
    }
    CHECK_THROWS_AS(delta_jacobian((VectorXd(2) << -1.0, 0.5).finished(), 1),
                    InvalidTransformError);
}

TEST_CASE("wald intervals") {
    FitResult fr;
    fr.state = ParameterState::zero(2, 1, 1);
    fr.state.beta(0, 0) = 0.061;
    fr.state.rho(0) = 0.0;
    MatrixXd cov = MatrixXd::Zero(3, 3);
    cov(0, 0) = 0.0191 * 0.0191;

    SECTION("level 0.95 reproduces a table-style row") {
        const auto rows = wald_intervals(fr, cov, 0.95);
        CHECK(rows[0].lower == Catch::Approx(0.023).margin(1e-3));
        CHECK(rows[0].upper == Catch::Approx(0.098).margin(1e-3));
        CHECK(rows[0].excludes_zero);
    }

    SECTION("zero variance degenerates to a point") {
        const auto rows = wald_intervals(fr, cov, 0.95);
        CHECK(rows[1].lower == rows[1].estimate);
        CHECK(rows[1].upper == rows[1].estimate);
    }

    SECTION("one-sigma level") {
        const auto rows = wald_intervals(fr, cov, 0.6826894921370859);
        CHECK((rows[0].upper - rows[0].estimate) / rows[0].se == Catch::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("region statistic basics and block extraction") {
    Rng rng(107);
    const auto si = oracle::random_instance(rng, Link::Identity, VarianceFamily::Constant, 60, 4, 2, 1);
    SolverConfig cfg;
    const FitResult fr = fit(si.ds, si.spec, cfg);
    REQUIRE(fr.converged);
    const SandwichParts parts = sandwich(si.spec, si.ds, fr);
    const std::vector<int> subset = {0, 2};
    const InferenceResult inf = make_inference(si.spec, si.ds, fr, parts, subset, 0.95);

    SECTION("estimate equals hypothesis gives zero") {
        VectorXd beta0(4);
        beta0 << fr.state.beta(0, 0), fr.state.beta(0, 1), fr.state.beta(2, 0), fr.state.beta(2, 1);
        const auto rs = region_statistic(fr, inf, beta0, fr.state.rho, 2);
        CHECK(rs.stat_beta == Catch::Approx(0.0).margin(1e-12));
        CHECK(rs.stat_rho == Catch::Approx(0.0).margin(1e-12));
        CHECK(rs.df_beta == 4);
        CHECK(rs.df_rho == 1);
    }

    SECTION("one-dimensional statistic is the squared z-score") {
        const InferenceResult inf1 = make_inference(si.spec, si.ds, fr, parts, {1}, 0.95);
        VectorXd beta0(2);
        beta0 << fr.state.beta(1, 0) - 0.1, fr.state.beta(1, 1);
        // Restrict to a single scalar by zeroing the second offset: compare
        // against the quadratic form computed by hand.
        const VectorXd diff = (VectorXd(2) << 0.1, 0.0).finished();
        const double by_hand = diff.dot(inf1.v_beta_S.llt().solve(diff));
        const auto rs = region_statistic(fr, inf1, beta0, fr.state.rho, 2);
        CHECK(rs.stat_beta == Catch::Approx(by_hand).epsilon(1e-10));
    }

    SECTION("extraction commutes with covariance computation") {
        // Selecting rows/cols of the full theta covariance equals the stored
        // subset covariance.
        const MatrixXd direct = extract_theta_cov(inf.theta_cov, subset, 4, 2, 1);
        CHECK((direct - inf.theta_cov_S).cwiseAbs().maxCoeff() == 0.0);
        CHECK(inf.theta_cov_S.diagonal().minCoeff() >= 0.0);
    }
}
