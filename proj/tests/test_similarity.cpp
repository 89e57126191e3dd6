#include <catch2/catch_amalgamated.hpp>

#include "jmcr/similarity.hpp"
#include "jmcr/stats.hpp"

using namespace jmcr;

TEST_CASE("quantitative kernel fixed values") {
    SECTION("equal values give similarity one") {
        const auto W = build_quantitative({2.0, 2.0});
        CHECK(W(0, 1) == 1.0);
        CHECK(W(0, 0) == 0.0);
    }
    SECTION("unit gap") {
        const auto W = build_quantitative({0.0, 1.0});
        CHECK(W(0, 1) == Catch::Approx(0.36787944117144233).epsilon(1e-14));
    }
    SECTION("three points, squared-distance decay") {
        const auto W = build_quantitative({0.0, 1.0, 3.0});
        CHECK(W(0, 2) == Catch::Approx(1.2340980408667956e-4).epsilon(1e-12));
        CHECK(W(1, 2) == Catch::Approx(std::exp(-4.0)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(build_quantitative({1.0, std::numeric_limits<double>::infinity()}),
                    InvalidInputError);
}

TEST_CASE("qualitative kernel is the match indicator") {
    const auto W2 = build_qualitative({"A", "A"});
    CHECK(W2(0, 1) == 1.0);
    const auto W2b = build_qualitative({"A", "B"});
    CHECK(W2b(0, 1) == 0.0);
    const auto W3 = build_qualitative({"A", "B", "A"});
    CHECK(W3(0, 2) == 1.0);
    CHECK(W3(0, 1) == 0.0);
    CHECK(W3(1, 2) == 0.0);
    CHECK(W3.diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("validate_basis catches each violation kind") {
    SimilarityBasis basis;
    basis.labels = {"bad_diag", "ok", "asym"};
    basis.mats.push_back(Eigen::MatrixXd::Identity(3, 3));
    Eigen::MatrixXd ok = Eigen::MatrixXd::Zero(3, 3);
    ok(0, 1) = ok(1, 0) = 0.4;
    basis.mats.push_back(ok);
    Eigen::MatrixXd asym = Eigen::MatrixXd::Zero(3, 3);
    asym(0, 1) = 0.2;
    asym(1, 0) = 0.3;
    basis.mats.push_back(asym);

    const auto report = validate_basis(basis);
    REQUIRE(report.size() == 4);  // three diagonal ones + one asymmetry
    int diag = 0, asy = 0;
    for (const auto& v : report) {
        if (v.what.find("nonzero diagonal") != std::string::npos) ++diag;
        if (v.what.find("asymmetry at (1,2)") != std::string::npos) ++asy;
    }
    CHECK(diag == 3);
    CHECK(asy == 1);

    SimilarityBasis clean;
    clean.mats.push_back(ok);
    CHECK(validate_basis(clean).empty());
}

TEST_CASE("built matrices always pass validation") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        const int p = 3 + static_cast<int>(rng.index(8));
        TraitColumn trait;
        if (t % 2 == 0) {
            trait.kind = TraitKind::Quantitative;
            for (int j = 0; j < p; ++j) trait.values.push_back(rng.normal() * 3.0);
        } else {
            trait.kind = TraitKind::Qualitative;
            static const char* lv[] = {"x", "y", "z"};
            for (int j = 0; j < p; ++j) trait.labels.push_back(lv[rng.index(3)]);
        }
        SimilarityBasis basis;
        basis.mats.push_back(build_from_trait(trait));
        CHECK(validate_basis(basis).empty());
        CHECK(basis.mats[0].cwiseAbs().maxCoeff() <= 1.0);
    }
}

TEST_CASE("permutation equivariance of the kernels") {
    Rng rng(23);
    std::vector<double> values;
    for (int j = 0; j < 6; ++j) values.push_back(rng.normal());
    const auto W = build_quantitative(values);

    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    std::vector<double> permuted(6);
    for (int j = 0; j < 6; ++j) permuted[static_cast<std::size_t>(j)] = values[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
    const auto Wp = build_quantitative(permuted);
    for (int a = 0; a < 6; ++a)
        for (int b = 0; b < 6; ++b)
            CHECK(Wp(a, b) == W(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]));
}

TEST_CASE("kernel scale sensitivity and standardization") {
    const std::vector<double> values = {0.0, 1.0, 2.5};
    const auto W1 = build_quantitative(values);
    std::vector<double> doubled = values;
    for (auto& v : doubled) v *= 2.0;
    const auto W2 = build_quantitative(doubled);
    CHECK((W1 - W2).cwiseAbs().maxCoeff() > 0.1);  // raw kernel is scale sensitive

    // Standardization removes the scale dependence entirely.
    TraitColumn a{TraitKind::Quantitative, "t", values, {}};
    TraitColumn b{TraitKind::Quantitative, "t", doubled, {}};
    CHECK((build_from_trait(a) - build_from_trait(b)).cwiseAbs().maxCoeff() < 1e-14);
}
