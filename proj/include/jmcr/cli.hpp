#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "jmcr/io.hpp"

namespace jmcr {

// Exit codes shared by all subcommands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;       // config / IO / parse problems
inline constexpr int kExitValidation = 3;   // semantic validation failures
inline constexpr int kExitNoConvergence = 4;
inline constexpr int kExitNumerical = 5;

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> threads;
    bool quiet = false;
};

namespace cli_detail {

struct LoadedFit {
    FitConfig cfg;
    Dataset ds;
    ModelSpec spec;
};

inline LoadedFit load_fit_inputs(const std::string& config_path, const CliOverrides& over) {
    LoadedFit out;
    out.cfg = load_fit_config(config_path);
    if (over.seed) out.cfg.seed = *over.seed;
    if (over.out_dir) out.cfg.out_dir = *over.out_dir;

    const CsvTable yt = read_csv_numeric(out.cfg.responses);
    const CsvTable xt = read_csv_numeric(out.cfg.covariates);
    out.cfg.response_names = yt.header;
    out.cfg.covariate_names = xt.header;
    out.ds.Y = yt.values;
    out.ds.X = xt.values;

    const int p = static_cast<int>(out.ds.Y.cols());
    if (!out.cfg.traits.empty()) {
        const auto traits = read_trait_csv(out.cfg.traits);
        for (const auto& trait : traits) {
            if (trait.size() != p)
                throw InvalidInputError(out.cfg.traits + ": trait '" + trait.name + "' has " +
                                        std::to_string(trait.size()) + " rows, expected " +
                                        std::to_string(p));
            out.ds.basis.push_back(build_from_trait(trait, out.cfg.standardize_traits));
            out.cfg.basis_labels.push_back(trait.name);
        }
    }
    for (const auto& wf : out.cfg.w_files) {
        out.ds.basis.push_back(read_csv_matrix(wf));
        out.cfg.basis_labels.push_back(std::filesystem::path(wf).stem().string());
    }

    out.spec.link = io_detail::parse_link(out.cfg.link);
    out.spec.variance = io_detail::parse_variance(out.cfg.variance);
    out.spec.n = static_cast<int>(out.ds.Y.rows());
    out.spec.p = p;
    out.spec.d = static_cast<int>(out.ds.X.cols());
    out.spec.K = static_cast<int>(out.ds.basis.size());
    return out;
}

inline std::vector<BasisViolation> validate_inputs(const LoadedFit& in) {
    validate_dataset(in.ds, in.spec);
    SimilarityBasis basis{in.ds.basis, in.cfg.basis_labels};
    return validate_basis(basis);
}

// Per-axis feasible interval for each rho_k holding the others at zero:
// I + rho W_k is PD iff rho in (-1/max_eig, 1/(-min_eig)).
inline std::pair<double, double> axis_interval(const MatrixXd& W) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(W, Eigen::EigenvaluesOnly);
    const double hi_eig = es.eigenvalues().maxCoeff();
    const double lo_eig = es.eigenvalues().minCoeff();
    const double lo = hi_eig > 0 ? -1.0 / hi_eig : -std::numeric_limits<double>::infinity();
    const double hi = lo_eig < 0 ? -1.0 / lo_eig : std::numeric_limits<double>::infinity();
    return {lo, hi};
}

inline int map_exception_to_exit(const std::exception& e, bool quiet) {
    if (!quiet) std::cerr << "error: " << e.what() << "\n";
    if (dynamic_cast<const ParseError*>(&e)) return kExitConfig;
    if (dynamic_cast<const InvalidInputError*>(&e)) return kExitValidation;
    if (dynamic_cast<const InvalidDesignError*>(&e)) return kExitValidation;
    if (dynamic_cast<const NonConvergenceError*>(&e)) return kExitNoConvergence;
    if (dynamic_cast<const Error*>(&e)) return kExitNumerical;
    return kExitNumerical;
}

} // namespace cli_detail

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

inline int run_fit(const std::string& config_path, const CliOverrides& over) {
    try {
        if (over.threads) set_thread_count(*over.threads);
        cli_detail::LoadedFit in = cli_detail::load_fit_inputs(config_path, over);
        const auto violations = cli_detail::validate_inputs(in);
        if (!violations.empty()) {
            if (!over.quiet)
                for (const auto& v : violations)
                    std::cerr << "validation: W_" << v.matrix_index + 1 << ": " << v.what << "\n";
            return kExitValidation;
        }

        SolverConfig solver = in.cfg.solver;
        solver.estimate_phi = in.cfg.estimate_phi && !in.cfg.fix_phi_at_one;

        const FitResult fr = fit(in.ds, in.spec, solver);
        std::filesystem::create_directories(in.cfg.out_dir);
        const std::filesystem::path out(in.cfg.out_dir);
        write_fit_json((out / "fit.json").string(), in.spec, fr, in.cfg.seed);
        if (!fr.converged) {
            if (!over.quiet)
                std::cerr << "fit did not converge after " << fr.outer_iters << " iterations\n";
            return kExitNoConvergence;
        }

        const SandwichParts parts = sandwich(in.spec, in.ds, fr);
        std::vector<int> subset;
        for (int s : in.cfg.subset) subset.push_back(s - 1);
        if (subset.empty())
            for (int j = 0; j < std::min(in.spec.p, 5); ++j) subset.push_back(j);
        const InferenceResult inf = make_inference(in.spec, in.ds, fr, parts, subset, in.cfg.level);
        write_inference_csv((out / "inference.csv").string(), fr, inf.wald, in.cfg.response_names,
                            in.cfg.covariate_names, in.cfg.basis_labels);

        std::ofstream summary(out / "summary.txt");
        summary << "joint mean-correlation regression fit\n"
                << "n=" << in.spec.n << " p=" << in.spec.p << " d=" << in.spec.d
                << " K=" << in.spec.K << " link=" << to_string(in.spec.link)
                << " variance=" << to_string(in.spec.variance) << "\n"
                << "converged in " << fr.outer_iters << " outer iterations, "
                << fr.admm_invocations << " constrained correlation solves\n"
                << "min eigenvalue of Sigma(alpha): " << format_double(fr.min_eig) << "\n"
                << "correlation parameters (rho):";
        for (int k = 0; k < in.spec.K; ++k) {
            summary << " " << (k < static_cast<int>(in.cfg.basis_labels.size())
                                   ? in.cfg.basis_labels[static_cast<std::size_t>(k)]
                                   : "W" + std::to_string(k + 1))
                    << "=" << format_double(fr.state.rho(k));
        }
        summary << "\nmu3=" << format_double(parts.mu3) << " mu4=" << format_double(parts.mu4)
                << "\n";
        if (in.spec.p * in.spec.p >= in.spec.n && !over.quiet)
            std::cerr << "warning: p^2 >= n; large-sample approximations may be optimistic\n";
        if (!over.quiet) std::cout << "wrote " << (out / "fit.json").string() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return cli_detail::map_exception_to_exit(e, over.quiet);
    }
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

inline int run_validate(const std::string& config_path, const CliOverrides& over) {
    try {
        if (over.threads) set_thread_count(*over.threads);
        cli_detail::LoadedFit in = cli_detail::load_fit_inputs(config_path, over);
        const auto violations = cli_detail::validate_inputs(in);
        nlohmann::json j;
        j["schema_version"] = kSchemaVersion;
        j["n"] = in.spec.n;
        j["p"] = in.spec.p;
        j["d"] = in.spec.d;
        j["K"] = in.spec.K;
        nlohmann::json jv = nlohmann::json::array();
        for (const auto& v : violations)
            jv.push_back({{"matrix", v.matrix_index + 1}, {"what", v.what}});
        j["violations"] = jv;
        nlohmann::json jw = nlohmann::json::array();
        for (std::size_t k = 0; k < in.ds.basis.size(); ++k) {
            const MatrixXd& W = in.ds.basis[k];
            const int p = static_cast<int>(W.rows());
            double sum = 0.0, mx = -1e300, mn = 1e300;
            for (int a = 0; a < p; ++a)
                for (int b = 0; b < p; ++b)
                    if (a != b) {
                        sum += W(a, b);
                        mx = std::max(mx, W(a, b));
                        mn = std::min(mn, W(a, b));
                    }
            const auto [lo, hi] = cli_detail::axis_interval(W);
            jw.push_back({{"label", k < in.cfg.basis_labels.size() ? in.cfg.basis_labels[k]
                                                                   : "W" + std::to_string(k + 1)},
                          {"mean_offdiag", sum / (double(p) * (p - 1))},
                          {"min_offdiag", mn},
                          {"max_offdiag", mx},
                          {"rho_axis_interval", {lo, hi}}});
        }
        j["basis_summary"] = jw;
        const std::string out_dir = over.out_dir.value_or(in.cfg.out_dir);
        std::filesystem::create_directories(out_dir);
        const std::string out_path =
            (std::filesystem::path(out_dir) / "validation.json").string();
        std::ofstream out(out_path);
        out << j.dump(2) << "\n";
        if (!over.quiet) {
            for (const auto& v : violations)
                std::cerr << "validation: W_" << v.matrix_index + 1 << ": " << v.what << "\n";
            std::cout << "wrote " << out_path << "\n";
        }
        return violations.empty() ? kExitOk : kExitValidation;
    } catch (const std::exception& e) {
        return cli_detail::map_exception_to_exit(e, over.quiet);
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline int run_simulate(const std::string& config_path, const CliOverrides& over) {
    try {
        if (over.threads) set_thread_count(*over.threads);
        SimulateConfig cfg = load_simulate_config(config_path);
        if (over.seed) cfg.seed = *over.seed;
        if (over.out_dir) cfg.out_dir = *over.out_dir;

        std::vector<SimDesign> designs;
        std::uint64_t cell_index = 0;
        for (Family family : cfg.families)
            for (int p : cfg.p_grid)
                for (int n : cfg.n_grid)
                    designs.push_back(make_design(family, n, p, cfg.d, cfg.K,
                                                  mix_seed(cfg.seed, cell_index++), cfg.reps));

        StudyOptions opt;
        opt.solver = cfg.solver;
        opt.level = cfg.level;
        opt.w_noise_sd = cfg.w_noise_sd;
        if (cfg.kind == "coverage")
            for (int s : cfg.subset) opt.subset.push_back(s - 1);

        const StudyReport report = run_study(designs, opt);
        std::filesystem::create_directories(cfg.out_dir);
        const std::filesystem::path out(cfg.out_dir);
        write_study_json((out / "report.json").string(), report, designs, cfg.seed);
        write_replicates_csv((out / "replicates.csv").string(), report, designs);
        if (cfg.plots) write_mse_svg((out / "mse_curves.svg").string(), report, designs);
        if (!over.quiet) std::cout << "wrote " << (out / "report.json").string() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return cli_detail::map_exception_to_exit(e, over.quiet);
    }
}

} // namespace jmcr
