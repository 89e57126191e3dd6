#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmcr/similarity.hpp"
#include "jmcr/simulation.hpp"

namespace jmcr {

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Number formatting
//
// Shortest round-trip representation so that identical runs produce
// byte-identical files.
// ---------------------------------------------------------------------------

inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// CSV reading
// ---------------------------------------------------------------------------

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<std::vector<std::string>> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.empty()) throw ParseError(path + ": file is empty");
    return rows;
}

inline double parse_double(const std::string& cell, const std::string& path, int row, int col) {
    double value = 0.0;
    const char* begin = cell.data();
    const char* end = begin + cell.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    const auto res = std::from_chars(begin, end, value);
    if (res.ec != std::errc{})
        throw ParseError(path + ": row " + std::to_string(row) + ", column " +
                         std::to_string(col) + ": not a number: '" + cell + "'");
    return value;
}

} // namespace io_detail

struct CsvTable {
    std::vector<std::string> header;
    MatrixXd values;
};

// Headered numeric CSV; data rows are numbered from 1 in error messages.
inline CsvTable read_csv_numeric(const std::string& path) {
    const auto rows = io_detail::read_lines(path);
    CsvTable table;
    table.header = rows.front();
    const std::size_t ncol = table.header.size();
    table.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(ncol));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != ncol)
            throw ParseError(path + ": row " + std::to_string(r) + ": expected " +
                             std::to_string(ncol) + " fields, got " + std::to_string(rows[r].size()));
        for (std::size_t c = 0; c < ncol; ++c)
            table.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) =
                io_detail::parse_double(rows[r][c], path, static_cast<int>(r), static_cast<int>(c + 1));
    }
    return table;
}

// Headerless dense numeric matrix (used for precomputed similarity matrices).
inline MatrixXd read_csv_matrix(const std::string& path) {
    const auto rows = io_detail::read_lines(path);
    const std::size_t ncol = rows.front().size();
    MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncol));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != ncol)
            throw ParseError(path + ": row " + std::to_string(r + 1) + ": expected " +
                             std::to_string(ncol) + " fields, got " + std::to_string(rows[r].size()));
        for (std::size_t c = 0; c < ncol; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                io_detail::parse_double(rows[r][c], path, static_cast<int>(r + 1), static_cast<int>(c + 1));
    }
    return m;
}

// Trait table: rows are responses, one column per trait, header cells are
// "name:kind" with kind either quantitative or qualitative.
inline std::vector<TraitColumn> read_trait_csv(const std::string& path) {
    const auto rows = io_detail::read_lines(path);
    const auto& header = rows.front();
    std::vector<TraitColumn> traits(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& cell = header[c];
        const auto pos = cell.rfind(':');
        if (pos == std::string::npos)
            throw ParseError(path + ": header column " + std::to_string(c + 1) +
                             ": expected 'name:kind' with kind quantitative|qualitative");
        traits[c].name = cell.substr(0, pos);
        const std::string kind = cell.substr(pos + 1);
        if (kind == "quantitative") traits[c].kind = TraitKind::Quantitative;
        else if (kind == "qualitative") traits[c].kind = TraitKind::Qualitative;
        else
            throw ParseError(path + ": header column " + std::to_string(c + 1) +
                             ": unknown trait kind '" + kind + "'");
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != header.size())
            throw ParseError(path + ": row " + std::to_string(r) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(rows[r].size()));
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (traits[c].kind == TraitKind::Quantitative)
                traits[c].values.push_back(
                    io_detail::parse_double(rows[r][c], path, static_cast<int>(r), static_cast<int>(c + 1)));
            else
                traits[c].labels.push_back(rows[r][c]);
        }
    }
    return traits;
}

inline void write_csv_matrix(const std::string& path, const MatrixXd& m,
                             const std::vector<std::string>& header = {}) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    if (!header.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c)
            out << (c ? "," : "") << header[c];
        out << "\n";
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out << (c ? "," : "") << format_double(m(r, c));
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct FitConfig {
    std::string responses;
    std::string covariates;
    std::string traits;                // either traits ...
    std::vector<std::string> w_files;  // ... or precomputed matrices
    bool standardize_traits = true;
    std::string link = "identity";
    std::string variance = "constant";
    bool estimate_phi = true;
    bool fix_phi_at_one = false;
    SolverConfig solver;
    double level = 0.95;
    std::vector<int> subset;  // 1-based response indices in the file
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    std::vector<std::string> response_names;   // filled from the CSV header
    std::vector<std::string> covariate_names;  // filled from the CSV header
    std::vector<std::string> basis_labels;
};

struct SimulateConfig {
    std::string kind = "mse";  // "mse" or "coverage"
    std::vector<Family> families;
    std::vector<int> n_grid;
    std::vector<int> p_grid;
    int d = 4;
    int K = 5;
    int reps = 500;
    std::vector<int> subset;  // 1-based
    double level = 0.95;
    double w_noise_sd = 0.0;
    bool plots = false;
    SolverConfig solver;
    std::uint64_t seed = 1;
    std::string out_dir = ".";
};

namespace io_detail {

inline Link parse_link(const std::string& s) {
    if (s == "identity") return Link::Identity;
    if (s == "log") return Link::Log;
    if (s == "logit") return Link::Logit;
    throw ParseError("config: unknown link '" + s + "'");
}

inline VarianceFamily parse_variance(const std::string& s) {
    if (s == "constant") return VarianceFamily::Constant;
    if (s == "proportional") return VarianceFamily::Proportional;
    if (s == "quadratic") return VarianceFamily::Quadratic;
    if (s == "binary") return VarianceFamily::Binary;
    throw ParseError("config: unknown variance family '" + s + "'");
}

inline Family parse_family(const std::string& s) {
    if (s == "gaussian") return Family::Gaussian;
    if (s == "poisson") return Family::Poisson;
    if (s == "bernoulli") return Family::Bernoulli;
    if (s == "negbin") return Family::NegBin;
    throw ParseError("config: unknown family '" + s + "'");
}

inline void parse_solver_overrides(const nlohmann::json& j, SolverConfig& cfg) {
    if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
    if (j.contains("nu")) cfg.nu = j.at("nu").get<double>();
    if (j.contains("tol_outer")) cfg.tol_outer = j.at("tol_outer").get<double>();
    if (j.contains("tol_admm")) cfg.tol_admm = j.at("tol_admm").get<double>();
    if (j.contains("max_outer")) cfg.max_outer = j.at("max_outer").get<int>();
    if (j.contains("max_admm")) cfg.max_admm = j.at("max_admm").get<int>();
    if (j.contains("admm_penalty")) cfg.admm_penalty = j.at("admm_penalty").get<double>();
    if (j.contains("adaptive_penalty")) cfg.adaptive_penalty = j.at("adaptive_penalty").get<bool>();
    if (j.contains("update_phi_every_iter"))
        cfg.update_phi_every_iter = j.at("update_phi_every_iter").get<bool>();
}

inline std::string resolve_path(const std::filesystem::path& base, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return p.string();
    return (base / p).string();
}

} // namespace io_detail

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": invalid JSON: " + e.what());
    }
    return j;
}

inline FitConfig load_fit_config(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    FitConfig cfg;
    try {
        cfg.responses = io_detail::resolve_path(base, j.at("responses").get<std::string>());
        cfg.covariates = io_detail::resolve_path(base, j.at("covariates").get<std::string>());
        if (j.contains("traits"))
            cfg.traits = io_detail::resolve_path(base, j.at("traits").get<std::string>());
        if (j.contains("w_matrices"))
            for (const auto& w : j.at("w_matrices"))
                cfg.w_files.push_back(io_detail::resolve_path(base, w.get<std::string>()));
        if (j.contains("standardize_traits"))
            cfg.standardize_traits = j.at("standardize_traits").get<bool>();
        const auto& model = j.at("model");
        cfg.link = model.at("link").get<std::string>();
        cfg.variance = model.at("variance").get<std::string>();
        if (model.contains("estimate_phi")) cfg.estimate_phi = model.at("estimate_phi").get<bool>();
        if (model.contains("fix_phi_at_one")) cfg.fix_phi_at_one = model.at("fix_phi_at_one").get<bool>();
        if (j.contains("solver")) io_detail::parse_solver_overrides(j.at("solver"), cfg.solver);
        if (j.contains("inference")) {
            const auto& inf = j.at("inference");
            if (inf.contains("level")) cfg.level = inf.at("level").get<double>();
            if (inf.contains("subset"))
                for (const auto& s : inf.at("subset")) cfg.subset.push_back(s.get<int>());
        }
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("out_dir"))
            cfg.out_dir = io_detail::resolve_path(base, j.at("out_dir").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw ParseError(path + ": level must be in (0,1)");
    return cfg;
}

inline SimulateConfig load_simulate_config(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    SimulateConfig cfg;
    try {
        if (j.contains("kind")) cfg.kind = j.at("kind").get<std::string>();
        for (const auto& f : j.at("families"))
            cfg.families.push_back(io_detail::parse_family(f.get<std::string>()));
        for (const auto& n : j.at("n_grid")) cfg.n_grid.push_back(n.get<int>());
        for (const auto& p : j.at("p_grid")) cfg.p_grid.push_back(p.get<int>());
        if (j.contains("d")) cfg.d = j.at("d").get<int>();
        if (j.contains("K")) cfg.K = j.at("K").get<int>();
        if (j.contains("reps")) cfg.reps = j.at("reps").get<int>();
        if (j.contains("subset"))
            for (const auto& s : j.at("subset")) cfg.subset.push_back(s.get<int>());
        if (j.contains("level")) cfg.level = j.at("level").get<double>();
        if (j.contains("w_noise_sd")) cfg.w_noise_sd = j.at("w_noise_sd").get<double>();
        if (j.contains("plots")) cfg.plots = j.at("plots").get<bool>();
        if (j.contains("solver")) io_detail::parse_solver_overrides(j.at("solver"), cfg.solver);
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("out_dir"))
            cfg.out_dir = io_detail::resolve_path(base, j.at("out_dir").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (cfg.kind != "mse" && cfg.kind != "coverage")
        throw ParseError(path + ": kind must be 'mse' or 'coverage'");
    if (cfg.kind == "coverage" && cfg.subset.empty())
        throw ParseError(path + ": coverage studies need a nonempty subset");
    if (cfg.families.empty() || cfg.n_grid.empty() || cfg.p_grid.empty())
        throw ParseError(path + ": families, n_grid and p_grid must be nonempty");
    return cfg;
}

// ---------------------------------------------------------------------------
// Result writers
// ---------------------------------------------------------------------------

inline nlohmann::json matrix_to_json(const MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json vector_to_json(const VectorXd& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline void write_fit_json(const std::string& path, const ModelSpec& spec, const FitResult& fr,
                           std::uint64_t seed) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["model"] = {{"link", to_string(spec.link)},
                  {"variance", to_string(spec.variance)},
                  {"n", spec.n},
                  {"p", spec.p},
                  {"d", spec.d},
                  {"K", spec.K}};
    j["seed"] = seed;
    j["converged"] = fr.converged;
    j["outer_iterations"] = fr.outer_iters;
    j["parameters"] = {{"beta", matrix_to_json(fr.state.beta)},
                       {"alpha", vector_to_json(fr.state.alpha)},
                       {"rho", vector_to_json(fr.state.rho)},
                       {"phi", vector_to_json(fr.state.phi)}};
    j["diagnostics"] = {{"psi_beta_inf", fr.psi_beta_inf},
                        {"psi_alpha_inf", fr.psi_alpha_inf},
                        {"min_eigenvalue", fr.min_eig},
                        {"admm_invocations", fr.admm_invocations},
                        {"predictor_clamps", fr.clamp_count},
                        {"phi_at_boundary", fr.phi_at_boundary}};
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

// Inference table: one row per (response, covariate) coefficient, then one
// row per correlation regression parameter.
inline void write_inference_csv(const std::string& path, const FitResult& fr,
                                const std::vector<WaldRow>& wald,
                                const std::vector<std::string>& response_names,
                                const std::vector<std::string>& covariate_names,
                                const std::vector<std::string>& basis_labels) {
    const int p = static_cast<int>(fr.state.beta.rows());
    const int d = static_cast<int>(fr.state.beta.cols());
    const int K = static_cast<int>(fr.state.rho.size());
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << "block,response,term,estimate,se,lower,upper,excludes_zero\n";
    auto name_or = [](const std::vector<std::string>& names, int idx, const std::string& stem) {
        return idx < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(idx)]
                                                    : stem + std::to_string(idx + 1);
    };
    for (int j = 0; j < p; ++j)
        for (int l = 0; l < d; ++l) {
            const WaldRow& row = wald[static_cast<std::size_t>(j * d + l)];
            out << "mean," << name_or(response_names, j, "response") << ","
                << name_or(covariate_names, l, "x") << "," << format_double(row.estimate) << ","
                << format_double(row.se) << "," << format_double(row.lower) << ","
                << format_double(row.upper) << "," << (row.excludes_zero ? 1 : 0) << "\n";
        }
    for (int k = 0; k < K; ++k) {
        const WaldRow& row = wald[static_cast<std::size_t>(p * d + k)];
        out << "correlation,rho," << name_or(basis_labels, k, "W") << ","
            << format_double(row.estimate) << "," << format_double(row.se) << ","
            << format_double(row.lower) << "," << format_double(row.upper) << ","
            << (row.excludes_zero ? 1 : 0) << "\n";
    }
}

inline void write_study_json(const std::string& path, const StudyReport& report,
                             const std::vector<SimDesign>& designs, std::uint64_t seed) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = seed;
    j["total_failed"] = report.total_failed;
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t c = 0; c < report.cells.size(); ++c) {
        const CellAggregate& cell = report.cells[c];
        nlohmann::json jc;
        jc["family"] = to_string(cell.family);
        jc["n"] = cell.n;
        jc["p"] = cell.p;
        jc["reps_ok"] = cell.reps_ok;
        jc["reps_failed"] = cell.reps_failed;
        jc["mse_beta"] = cell.mse_beta;
        jc["mse_rho"] = cell.mse_rho;
        jc["unconstrained_in_A_plus_rate"] = cell.unconstrained_in_A_plus_rate;
        jc["mean_ms"] = cell.mean_ms;
        jc["max_ms"] = cell.max_ms;
        jc["latent_adjusted_clusters"] = cell.latent_adjusted_clusters;
        if (report.has_coverage) {
            jc["coverage_beta_region"] = cell.coverage_beta_region;
            jc["coverage_rho_region"] = cell.coverage_rho_region;
            jc["coverage_pointwise_beta"] = cell.pointwise_beta;
            jc["coverage_pointwise_rho"] = cell.pointwise_rho;
        }
        if (c < designs.size()) {
            jc["rho0"] = vector_to_json(designs[c].rho0);
            jc["min_eig_R"] = designs[c].min_eig_R;
        }
        cells.push_back(std::move(jc));
    }
    j["cells"] = std::move(cells);
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << j.dump(2) << "\n";
}

inline void write_replicates_csv(const std::string& path, const StudyReport& report,
                                 const std::vector<SimDesign>& designs) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << "cell,family,n,p,rep,ok,converged,mse_beta,mse_rho,admm_used";
    if (report.has_coverage) out << ",cover_beta,cover_rho,pointwise_beta,pointwise_rho";
    out << ",ms\n";
    for (const ReplicateRecord& rec : report.replicates) {
        const SimDesign& dz = designs[static_cast<std::size_t>(rec.cell)];
        out << rec.cell << "," << to_string(dz.family) << "," << dz.n << "," << dz.p << ","
            << rec.rep << "," << (rec.ok ? 1 : 0) << "," << (rec.converged ? 1 : 0) << ","
            << format_double(rec.mse_beta) << "," << format_double(rec.mse_rho) << ","
            << (rec.admm_used ? 1 : 0);
        if (report.has_coverage)
            out << "," << (rec.cover_beta ? 1 : 0) << "," << (rec.cover_rho ? 1 : 0) << ","
                << format_double(rec.pointwise_beta) << "," << format_double(rec.pointwise_rho);
        out << "," << format_double(rec.ms) << "\n";
    }
}

// ---------------------------------------------------------------------------
// SVG study plot: one column per family, MSE(beta) on top, MSE(rho) below,
// log10 MSE against n, one polyline per p.
// ---------------------------------------------------------------------------

inline void write_mse_svg(const std::string& path, const StudyReport& report,
                          const std::vector<SimDesign>& designs) {
    std::vector<Family> families;
    std::vector<int> ns, ps;
    for (const auto& dz : designs) {
        if (std::find(families.begin(), families.end(), dz.family) == families.end())
            families.push_back(dz.family);
        if (std::find(ns.begin(), ns.end(), dz.n) == ns.end()) ns.push_back(dz.n);
        if (std::find(ps.begin(), ps.end(), dz.p) == ps.end()) ps.push_back(dz.p);
    }
    std::sort(ns.begin(), ns.end());
    std::sort(ps.begin(), ps.end());

    const double panel_w = 260, panel_h = 200, margin = 55;
    const double width = margin + families.size() * panel_w + 20;
    const double height = margin + 2 * panel_h + 60;
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    auto cell_value = [&](Family f, int n, int p, bool beta) -> double {
        for (std::size_t c = 0; c < designs.size(); ++c)
            if (designs[c].family == f && designs[c].n == n && designs[c].p == p)
                return beta ? report.cells[c].mse_beta : report.cells[c].mse_rho;
        return std::numeric_limits<double>::quiet_NaN();
    };

    static const char* colors[] = {"#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400"};
    for (int row = 0; row < 2; ++row) {
        for (std::size_t fc = 0; fc < families.size(); ++fc) {
            // Panel range on the log10 scale.
            double lo = 1e300, hi = -1e300;
            for (int n : ns)
                for (int p : ps) {
                    const double v = cell_value(families[fc], n, p, row == 0);
                    if (std::isfinite(v) && v > 0) {
                        lo = std::min(lo, std::log10(v));
                        hi = std::max(hi, std::log10(v));
                    }
                }
            if (lo > hi) { lo = -2; hi = 0; }
            if (hi - lo < 0.5) { hi += 0.25; lo -= 0.25; }
            const double x0 = margin + fc * panel_w, y0 = 30 + row * (panel_h + 40);
            out << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << panel_w - 30
                << "\" height=\"" << panel_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
            out << "<text x=\"" << x0 + (panel_w - 30) / 2 << "\" y=\"" << y0 - 8
                << "\" text-anchor=\"middle\" font-size=\"13\">"
                << (row == 0 ? "MSE(beta) " : "MSE(rho) ") << to_string(families[fc])
                << "</text>\n";
            auto xpos = [&](int n) {
                const double t = ns.size() > 1
                                     ? (std::log2(double(n)) - std::log2(double(ns.front()))) /
                                           (std::log2(double(ns.back())) - std::log2(double(ns.front())))
                                     : 0.5;
                return x0 + 10 + t * (panel_w - 50);
            };
            auto ypos = [&](double v) {
                const double t = (std::log10(v) - lo) / (hi - lo);
                return y0 + panel_h - 10 - t * (panel_h - 20);
            };
            for (std::size_t pc = 0; pc < ps.size(); ++pc) {
                std::string points;
                for (int n : ns) {
                    const double v = cell_value(families[fc], n, ps[pc], row == 0);
                    if (!std::isfinite(v) || v <= 0) continue;
                    points += format_double(xpos(n)) + "," + format_double(ypos(v)) + " ";
                }
                if (points.empty()) continue;
                out << "<polyline fill=\"none\" stroke=\"" << colors[pc % 5]
                    << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
                out << "<text x=\"" << x0 + panel_w - 28 << "\" y=\"" << y0 + 14 + 14 * pc
                    << "\" font-size=\"11\" fill=\"" << colors[pc % 5] << "\">p=" << ps[pc]
                    << "</text>\n";
            }
            for (int n : ns)
                out << "<text x=\"" << xpos(n) << "\" y=\"" << y0 + panel_h + 14
                    << "\" text-anchor=\"middle\" font-size=\"11\">" << n << "</text>\n";
        }
    }
    out << "</svg>\n";
}

} // namespace jmcr
