#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "jmcr/inference.hpp"
#include "jmcr/norta.hpp"
#include "jmcr/parallel.hpp"
#include "jmcr/similarity.hpp"
#include "jmcr/solver.hpp"
#include "jmcr/stats.hpp"

namespace jmcr {

enum class Family { Gaussian, Poisson, Bernoulli, NegBin };

inline const char* to_string(Family f) {
    switch (f) {
        case Family::Gaussian: return "gaussian";
        case Family::Poisson: return "poisson";
        case Family::Bernoulli: return "bernoulli";
        case Family::NegBin: return "negbin";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Simulation designs
// ---------------------------------------------------------------------------

struct SimDesign {
    Family family = Family::Gaussian;
    int n = 0, p = 0, d = 0, K = 0;
    int reps = 500;
    std::uint64_t seed = 0;
    MatrixXd beta0;   // p x d truth
    VectorXd rho0;    // K truth
    VectorXd phi0;    // p truth
    MatrixXd X;       // covariates, fixed for the cell; responses vary by replicate
    std::vector<MatrixXd> basis;
    std::vector<std::string> basis_labels;
    bool estimate_phi = true;
    double min_eig_R = 0.0;

    ModelSpec model_spec() const {
        ModelSpec spec;
        spec.n = n;
        spec.p = p;
        spec.d = d;
        spec.K = K;
        switch (family) {
            case Family::Gaussian:
                spec.link = Link::Identity;
                spec.variance = VarianceFamily::Constant;
                break;
            case Family::Poisson:
                spec.link = Link::Log;
                spec.variance = VarianceFamily::Proportional;
                break;
            case Family::Bernoulli:
                spec.link = Link::Logit;
                spec.variance = VarianceFamily::Binary;
                break;
            case Family::NegBin:
                spec.link = Link::Log;
                spec.variance = VarianceFamily::Quadratic;
                break;
        }
        return spec;
    }

    MatrixXd correlation() const {
        MatrixXd R = MatrixXd::Identity(p, p);
        for (int k = 0; k < K; ++k) R += rho0(k) * basis[static_cast<std::size_t>(k)];
        return R;
    }
};

// Synthetic design: standard-normal quantitative traits and three-level
// qualitative traits feed the similarity kernels; the true correlation
// parameters are drawn and then shrunk into the interior of the valid space.
inline SimDesign make_design(Family family, int n, int p, int d, int K, std::uint64_t seed,
                             int reps = 500,
                             const std::vector<TraitKind>& trait_kinds_in = {}) {
    SimDesign dz;
    dz.family = family;
    dz.n = n;
    dz.p = p;
    dz.d = d;
    dz.K = K;
    dz.reps = reps;
    dz.seed = seed;
    Rng rng(mix_seed(seed, 0xD351));

    std::vector<TraitKind> kinds = trait_kinds_in;
    if (static_cast<int>(kinds.size()) != K) {
        kinds.clear();
        for (int k = 0; k < K; ++k)
            kinds.push_back(k % 2 == 0 ? TraitKind::Quantitative : TraitKind::Qualitative);
    }
    static const char* levels[3] = {"a", "b", "c"};
    for (int k = 0; k < K; ++k) {
        TraitColumn trait;
        trait.kind = kinds[static_cast<std::size_t>(k)];
        trait.name = "trait" + std::to_string(k + 1);
        if (trait.kind == TraitKind::Quantitative) {
            trait.values.resize(static_cast<std::size_t>(p));
            for (int j = 0; j < p; ++j) trait.values[static_cast<std::size_t>(j)] = rng.normal();
        } else {
            trait.labels.resize(static_cast<std::size_t>(p));
            for (int j = 0; j < p; ++j)
                trait.labels[static_cast<std::size_t>(j)] = levels[rng.index(3)];
        }
        dz.basis.push_back(build_from_trait(trait));
        dz.basis_labels.push_back(trait.name);
    }

    dz.X = MatrixXd::Ones(n, d);
    for (int i = 0; i < n; ++i)
        for (int l = 1; l < d; ++l) dz.X(i, l) = rng.normal();

    dz.beta0.resize(p, d);
    double b0_lo = -1.0, b0_hi = 1.0, bs_lo = -0.5, bs_hi = 0.5;
    switch (family) {
        case Family::Gaussian: break;
        case Family::Poisson:
        case Family::NegBin:
            b0_lo = 0.5; b0_hi = 1.5; bs_lo = -0.3; bs_hi = 0.3;
            break;
        case Family::Bernoulli:
            b0_lo = -0.7; b0_hi = 0.7; bs_lo = -0.5; bs_hi = 0.5;
            break;
    }
    for (int j = 0; j < p; ++j) {
        dz.beta0(j, 0) = rng.uniform(b0_lo, b0_hi);
        for (int l = 1; l < d; ++l) dz.beta0(j, l) = rng.uniform(bs_lo, bs_hi);
    }

    dz.phi0 = VectorXd::Ones(p);
    if (family == Family::NegBin) dz.phi0.setConstant(0.5);
    dz.estimate_phi = family == Family::Gaussian || family == Family::NegBin;

    dz.rho0.resize(K);
    for (int k = 0; k < K; ++k) dz.rho0(k) = rng.uniform(-0.1, 0.3);
    // Shrink until the correlation matrix is comfortably PD and its entries
    // stay within what discrete margins can attain.
    const double entry_cap = family == Family::Bernoulli ? 0.35 : 0.45;
    for (int guard = 0; guard < 200; ++guard) {
        const MatrixXd R = dz.correlation();
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(R, Eigen::EigenvaluesOnly);
        dz.min_eig_R = es.eigenvalues().minCoeff();
        double max_off = 0.0;
        for (int a = 0; a < p; ++a)
            for (int b = a + 1; b < p; ++b) max_off = std::max(max_off, std::abs(R(a, b)));
        if (dz.min_eig_R >= 0.1 && max_off <= entry_cap) break;
        dz.rho0 *= 0.9;
    }
    if (dz.min_eig_R < 0.1)
        throw InvalidDesignError("make_design: could not place rho0 inside the valid space");
    return dz;
}

// Restrict a design to its first p_new responses, keeping the covariates,
// correlation parameters and per-response truths of the retained block.
// Sweeps over p then compare like with like.
inline SimDesign truncate_design(const SimDesign& dz, int p_new) {
    if (p_new > dz.p || p_new < 2)
        throw InvalidDesignError("truncate_design: p_new out of range");
    SimDesign out = dz;
    out.p = p_new;
    out.beta0 = dz.beta0.topRows(p_new);
    out.phi0 = dz.phi0.head(p_new);
    out.basis.clear();
    for (const auto& W : dz.basis) out.basis.push_back(W.topLeftCorner(p_new, p_new));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.correlation(), Eigen::EigenvaluesOnly);
    out.min_eig_R = es.eigenvalues().minCoeff();
    return out;
}

// ---------------------------------------------------------------------------
// Response generation
// ---------------------------------------------------------------------------

// Immutable once built; generate() is const and safe to call concurrently
// with independent Rng streams.
class ResponseGenerator {
public:
    explicit ResponseGenerator(const SimDesign& design) : design_(design) {
        const ModelSpec spec = design.model_spec();
        mu0_ = mean_matrix(spec, design.beta0, design.X);
        const int n = design.n, p = design.p;
        sd0_.resize(n, p);
        for (int j = 0; j < p; ++j)
            for (int i = 0; i < n; ++i)
                sd0_(i, j) = std::sqrt(variance_apply(spec, mu0_(i, j), design.phi0(j)));
        R_ = design.correlation();

        if (design.family == Family::Gaussian) {
            Eigen::LLT<MatrixXd> llt(R_);
            if (llt.info() != Eigen::Success)
                throw InvalidDesignError("generator: correlation matrix is not positive definite");
            gauss_chol_ = llt.matrixL();
            return;
        }

        // Discrete families: per-cell margins, then a per-cluster latent
        // correlation matrix whose pairwise entries reproduce the target
        // response-scale correlations.
        margins_.resize(static_cast<std::size_t>(n) * p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) {
                MarginCache::Kind kind = MarginCache::Kind::Poisson;
                if (design.family == Family::Bernoulli) kind = MarginCache::Kind::Bernoulli;
                if (design.family == Family::NegBin) kind = MarginCache::Kind::NegBin;
                margins_[static_cast<std::size_t>(i) * p + j] =
                    cache_.get(kind, mu0_(i, j), design.phi0(j));
            }
        latent_chol_.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            MatrixXd lambda = MatrixXd::Identity(p, p);
            for (int a = 0; a < p; ++a)
                for (int b = a + 1; b < p; ++b) {
                    const double target = R_(a, b);
                    const double lam =
                        target == 0.0
                            ? 0.0
                            : cache_.latent(margins_[static_cast<std::size_t>(i) * p + a],
                                            margins_[static_cast<std::size_t>(i) * p + b], target,
                                            "(response " + std::to_string(a + 1) + ", response " +
                                                std::to_string(b + 1) + ")");
                    lambda(a, b) = lam;
                    lambda(b, a) = lam;
                }
            if (repair_latent_correlation(lambda)) ++adjusted_clusters_;
            Eigen::LLT<MatrixXd> llt(lambda);
            if (llt.info() != Eigen::Success)
                throw InvalidDesignError("generator: latent correlation not PD after repair");
            latent_chol_[static_cast<std::size_t>(i)] = llt.matrixL();
        }
    }

    ResponseGenerator(const ResponseGenerator&) = delete;
    ResponseGenerator& operator=(const ResponseGenerator&) = delete;

    MatrixXd generate(Rng& rng) const {
        const int n = design_.n, p = design_.p;
        MatrixXd Y(n, p);
        VectorXd xi(p);
        if (design_.family == Family::Gaussian) {
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < p; ++j) xi(j) = rng.normal();
                const VectorXd corr = gauss_chol_ * xi;
                for (int j = 0; j < p; ++j) Y(i, j) = mu0_(i, j) + sd0_(i, j) * corr(j);
            }
            return Y;
        }
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < p; ++j) xi(j) = rng.normal();
            const VectorXd z = latent_chol_[static_cast<std::size_t>(i)] * xi;
            for (int j = 0; j < p; ++j) {
                const double u = normal_cdf(z(j));
                Y(i, j) = margins_[static_cast<std::size_t>(i) * p + j]->sample(u);
            }
        }
        return Y;
    }

    const MatrixXd& true_means() const { return mu0_; }
    const MatrixXd& true_sds() const { return sd0_; }
    const MatrixXd& target_correlation() const { return R_; }
    int adjusted_clusters() const { return adjusted_clusters_; }

private:
    SimDesign design_;
    MatrixXd mu0_, sd0_, R_;
    MatrixXd gauss_chol_;
    MarginCache cache_;
    std::vector<const DiscreteMargin*> margins_;
    std::vector<MatrixXd> latent_chol_;
    int adjusted_clusters_ = 0;
};

inline Dataset generate_gaussian(const SimDesign& design, Rng& rng) {
    if (design.family != Family::Gaussian)
        throw InvalidDesignError("generate_gaussian: design family is not gaussian");
    ResponseGenerator gen(design);
    return Dataset{gen.generate(rng), design.X, design.basis};
}

inline Dataset generate_discrete(const SimDesign& design, Rng& rng) {
    if (design.family == Family::Gaussian)
        throw InvalidDesignError("generate_discrete: design family is gaussian");
    ResponseGenerator gen(design);
    return Dataset{gen.generate(rng), design.X, design.basis};
}

// ---------------------------------------------------------------------------
// Study harness
// ---------------------------------------------------------------------------

struct StudyOptions {
    SolverConfig solver;
    std::vector<int> subset;  // 0-based responses for region coverage; empty = MSE only
    double level = 0.95;
    double w_noise_sd = 0.0;  // symmetric zero-diagonal noise added to the fit basis
};

struct ReplicateRecord {
    int cell = 0;
    int rep = 0;
    bool ok = false;
    bool converged = false;
    double mse_beta = std::numeric_limits<double>::quiet_NaN();
    double mse_rho = std::numeric_limits<double>::quiet_NaN();
    bool admm_used = false;
    bool cover_beta = false;
    bool cover_rho = false;
    double pointwise_beta = std::numeric_limits<double>::quiet_NaN();
    double pointwise_rho = std::numeric_limits<double>::quiet_NaN();
    double ms = 0.0;
    std::string error;
};

struct CellAggregate {
    Family family = Family::Gaussian;
    int n = 0, p = 0;
    int reps_ok = 0, reps_failed = 0;
    double mse_beta = 0.0, mse_rho = 0.0;
    double coverage_beta_region = std::numeric_limits<double>::quiet_NaN();
    double coverage_rho_region = std::numeric_limits<double>::quiet_NaN();
    double pointwise_beta = std::numeric_limits<double>::quiet_NaN();
    double pointwise_rho = std::numeric_limits<double>::quiet_NaN();
    double unconstrained_in_A_plus_rate = 0.0;
    double mean_ms = 0.0, max_ms = 0.0;
    int latent_adjusted_clusters = 0;
};

struct StudyReport {
    std::vector<ReplicateRecord> replicates;
    std::vector<CellAggregate> cells;
    int total_failed = 0;
    bool has_coverage = false;
};

namespace detail {

inline MatrixXd noisy_basis_matrix(const MatrixXd& W, double sd, Rng& rng) {
    const int p = static_cast<int>(W.rows());
    MatrixXd out = W;
    for (int a = 0; a < p; ++a)
        for (int b = a + 1; b < p; ++b) {
            const double w = W(a, b) + sd * rng.normal();
            out(a, b) = w;
            out(b, a) = w;
        }
    return out;
}

} // namespace detail

inline StudyReport run_study(const std::vector<SimDesign>& designs, const StudyOptions& opt) {
    StudyReport report;
    report.has_coverage = !opt.subset.empty();

    std::vector<std::unique_ptr<ResponseGenerator>> generators;
    generators.reserve(designs.size());
    for (const auto& dz : designs) generators.push_back(std::make_unique<ResponseGenerator>(dz));

    struct Task {
        int cell;
        int rep;
    };
    std::vector<Task> tasks;
    for (int c = 0; c < static_cast<int>(designs.size()); ++c)
        for (int r = 0; r < designs[static_cast<std::size_t>(c)].reps; ++r)
            tasks.push_back({c, r});
    report.replicates.resize(tasks.size());

    parallel_blocks(tasks.size(), 1, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            const Task task = tasks[t];
            const SimDesign& dz = designs[static_cast<std::size_t>(task.cell)];
            const ResponseGenerator& gen = *generators[static_cast<std::size_t>(task.cell)];
            ReplicateRecord rec;
            rec.cell = task.cell;
            rec.rep = task.rep;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                Rng rng(mix_seed(dz.seed, static_cast<std::uint64_t>(task.rep)));
                Dataset ds{gen.generate(rng), dz.X, dz.basis};
                if (opt.w_noise_sd > 0.0) {
                    Rng noise_rng(mix_seed(mix_seed(dz.seed, static_cast<std::uint64_t>(task.rep)), 0x57A7));
                    for (auto& W : ds.basis)
                        W = detail::noisy_basis_matrix(W, opt.w_noise_sd, noise_rng);
                }
                SolverConfig cfg = opt.solver;
                cfg.estimate_phi = dz.estimate_phi;
                const ModelSpec spec = dz.model_spec();
                const FitResult fr = fit(ds, spec, cfg);
                rec.converged = fr.converged;
                if (!fr.converged) throw NonConvergenceError("replicate fit did not converge", {});
                rec.mse_beta = (fr.state.beta - dz.beta0).squaredNorm() / (dz.p * dz.d);
                rec.mse_rho = dz.K > 0 ? (fr.state.rho - dz.rho0).squaredNorm() / dz.K : 0.0;
                rec.admm_used = fr.admm_invocations > 0;

                if (report.has_coverage) {
                    const SandwichParts parts = sandwich(spec, ds, fr);
                    const InferenceResult inf =
                        make_inference(spec, ds, fr, parts, opt.subset, opt.level);
                    const int q = static_cast<int>(opt.subset.size());
                    VectorXd beta0_S(q * dz.d);
                    for (int a = 0; a < q; ++a)
                        beta0_S.segment(a * dz.d, dz.d) =
                            dz.beta0.row(opt.subset[static_cast<std::size_t>(a)]).transpose();
                    const RegionStatistic rs =
                        region_statistic(fr, inf, beta0_S, dz.rho0, dz.d);
                    rec.cover_beta =
                        rs.stat_beta <= chi_squared_quantile(opt.level, rs.df_beta);
                    rec.cover_rho = rs.stat_rho <= chi_squared_quantile(opt.level, rs.df_rho);

                    int hit_b = 0, tot_b = 0, hit_r = 0;
                    for (int a = 0; a < q; ++a) {
                        const int j = opt.subset[static_cast<std::size_t>(a)];
                        for (int l = 0; l < dz.d; ++l) {
                            const WaldRow& row = inf.wald[static_cast<std::size_t>(j * dz.d + l)];
                            const double truth = dz.beta0(j, l);
                            if (truth >= row.lower && truth <= row.upper) ++hit_b;
                            ++tot_b;
                        }
                    }
                    for (int k = 0; k < dz.K; ++k) {
                        const WaldRow& row =
                            inf.wald[static_cast<std::size_t>(dz.p * dz.d + k)];
                        if (dz.rho0(k) >= row.lower && dz.rho0(k) <= row.upper) ++hit_r;
                    }
                    rec.pointwise_beta = tot_b > 0 ? static_cast<double>(hit_b) / tot_b : 1.0;
                    rec.pointwise_rho = dz.K > 0 ? static_cast<double>(hit_r) / dz.K : 1.0;
                }
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.ok = false;
                rec.error = e.what();
            }
            rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
            report.replicates[t] = std::move(rec);
        }
    });

    // Aggregate in replicate order.
    report.cells.resize(designs.size());
    for (std::size_t c = 0; c < designs.size(); ++c) {
        CellAggregate& cell = report.cells[c];
        cell.family = designs[c].family;
        cell.n = designs[c].n;
        cell.p = designs[c].p;
        cell.latent_adjusted_clusters = generators[c]->adjusted_clusters();
    }
    std::vector<double> sum_pw_b(designs.size(), 0.0), sum_pw_r(designs.size(), 0.0);
    std::vector<int> cover_b(designs.size(), 0), cover_r(designs.size(), 0),
        unconstrained(designs.size(), 0);
    for (const ReplicateRecord& rec : report.replicates) {
        CellAggregate& cell = report.cells[static_cast<std::size_t>(rec.cell)];
        if (!rec.ok) {
            ++cell.reps_failed;
            ++report.total_failed;
            continue;
        }
        ++cell.reps_ok;
        cell.mse_beta += rec.mse_beta;
        cell.mse_rho += rec.mse_rho;
        cell.mean_ms += rec.ms;
        cell.max_ms = std::max(cell.max_ms, rec.ms);
        if (!rec.admm_used) ++unconstrained[static_cast<std::size_t>(rec.cell)];
        if (report.has_coverage) {
            cover_b[static_cast<std::size_t>(rec.cell)] += rec.cover_beta ? 1 : 0;
            cover_r[static_cast<std::size_t>(rec.cell)] += rec.cover_rho ? 1 : 0;
            sum_pw_b[static_cast<std::size_t>(rec.cell)] += rec.pointwise_beta;
            sum_pw_r[static_cast<std::size_t>(rec.cell)] += rec.pointwise_rho;
        }
    }
    int total = 0;
    for (std::size_t c = 0; c < designs.size(); ++c) {
        CellAggregate& cell = report.cells[c];
        total += cell.reps_ok + cell.reps_failed;
        if (cell.reps_ok > 0) {
            cell.mse_beta /= cell.reps_ok;
            cell.mse_rho /= cell.reps_ok;
            cell.mean_ms /= cell.reps_ok;
            cell.unconstrained_in_A_plus_rate =
                static_cast<double>(unconstrained[c]) / cell.reps_ok;
            if (report.has_coverage) {
                cell.coverage_beta_region = static_cast<double>(cover_b[c]) / cell.reps_ok;
                cell.coverage_rho_region = static_cast<double>(cover_r[c]) / cell.reps_ok;
                cell.pointwise_beta = sum_pw_b[c] / cell.reps_ok;
                cell.pointwise_rho = sum_pw_r[c] / cell.reps_ok;
            }
        }
    }
    if (total > 0 && report.total_failed > 0.05 * total)
        throw Error("study failed: " + std::to_string(report.total_failed) + " of " +
                    std::to_string(total) + " replicates failed");
    return report;
}

inline StudyReport run_mse_study(const std::vector<SimDesign>& designs, const StudyOptions& opt) {
    StudyOptions o = opt;
    o.subset.clear();
    return run_study(designs, o);
}

inline StudyReport run_coverage_study(const std::vector<SimDesign>& designs,
                                      const std::vector<int>& subset, const StudyOptions& opt) {
    StudyOptions o = opt;
    o.subset = subset;
    return run_study(designs, o);
}

} // namespace jmcr
