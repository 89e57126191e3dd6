// Command line front end: fit | simulate | validate, each driven by a JSON
// configuration document.

#include <CLI11.hpp>

#include "jmcr/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"joint mean and correlation regression for multivariate data"};
    app.require_subcommand(1);

    std::string config_path;
    jmcr::CliOverrides over;
    std::uint64_t seed_arg = 0;
    std::string out_arg;
    int threads_arg = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config_path, "JSON configuration file")->required();
        sub->add_option("--seed", seed_arg, "override the configured seed");
        sub->add_option("--out", out_arg, "override the output directory");
        sub->add_option("--threads", threads_arg, "worker thread count (0 = hardware)");
        sub->add_flag("--quiet", over.quiet, "suppress progress output");
    };

    CLI::App* fit_cmd = app.add_subcommand("fit", "fit the joint model to data files");
    CLI::App* sim_cmd = app.add_subcommand("simulate", "run a Monte Carlo study");
    CLI::App* val_cmd = app.add_subcommand("validate", "validate inputs without fitting");
    add_common(fit_cmd);
    add_common(sim_cmd);
    add_common(val_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : jmcr::kExitConfig;
    }

    if (fit_cmd->count("--seed") || sim_cmd->count("--seed") || val_cmd->count("--seed"))
        over.seed = seed_arg;
    if (fit_cmd->count("--out") || sim_cmd->count("--out") || val_cmd->count("--out"))
        over.out_dir = out_arg;
    if (fit_cmd->count("--threads") || sim_cmd->count("--threads") || val_cmd->count("--threads"))
        over.threads = threads_arg;

    if (fit_cmd->parsed()) return jmcr::run_fit(config_path, over);
    if (sim_cmd->parsed()) return jmcr::run_simulate(config_path, over);
    return jmcr::run_validate(config_path, over);
}
