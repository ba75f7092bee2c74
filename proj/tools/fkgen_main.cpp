#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fkgen/commands.hpp"
#include "fkgen/scenario.hpp"

namespace {

struct GlobalArgs {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config, "scenario config file (JSON)")->required();
    cmd->add_option("--seed", [&args](const CLI::results_t& r) {
        args.seed = std::stoull(r.front());
        return true;
    }, "override the config seed (u64)");
    cmd->add_option("--out", [&args](const CLI::results_t& r) {
        args.out = r.front();
        return true;
    }, "override the output directory");
    cmd->add_option("--threads", [&args](const CLI::results_t& r) {
        args.threads = std::stoi(r.front());
        return true;
    }, "cap worker threads (never changes results)");
}

fkgen::Scenario load(const GlobalArgs& args) {
    fkgen::CliOverrides overrides;
    overrides.seed = args.seed;
    overrides.out_dir = args.out;
    overrides.threads = args.threads;
    return fkgen::load_scenario(args.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feynman-Kac particle smoothing experiments"};
    app.require_subcommand(1);

    GlobalArgs smooth_args, genealogy_args, variance_args, oracle_args, hprocess_args;
    auto* smooth = app.add_subcommand("smooth", "forward-only smoothed estimate trace");
    add_global_flags(smooth, smooth_args);
    auto* genealogy = app.add_subcommand("genealogy", "ancestral-line estimates and lineage stats");
    add_global_flags(genealogy, genealogy_args);
    auto* variance = app.add_subcommand("compare-variance",
                                        "N*Var over an (n, N) grid with growth-exponent fits");
    add_global_flags(variance, variance_args);
    auto* oracle = app.add_subcommand("oracle-check", "exact identity and unbiasedness report");
    add_global_flags(oracle, oracle_args);
    auto* hprocess = app.add_subcommand("hprocess", "normalized smoothed estimates vs mu_h(f)");
    add_global_flags(hprocess, hprocess_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : fkgen::cli::kExitConfig;
    }

    try {
        if (smooth->parsed()) return fkgen::cli::cmd_smooth(load(smooth_args));
        if (genealogy->parsed()) return fkgen::cli::cmd_genealogy(load(genealogy_args));
        if (variance->parsed()) return fkgen::cli::cmd_compare_variance(load(variance_args));
        if (oracle->parsed()) return fkgen::cli::cmd_oracle_check(load(oracle_args));
        if (hprocess->parsed()) return fkgen::cli::cmd_hprocess(load(hprocess_args));
    } catch (...) {
        return fkgen::cli::exit_code_for_current_exception();
    }
    return fkgen::cli::kExitConfig;
}
