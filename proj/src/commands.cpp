#include "fkgen/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fkgen/io.hpp"
#include "fkgen/oracle.hpp"
#include "fkgen/parallel.hpp"
#include "fkgen/runner.hpp"
#include "fkgen/stats.hpp"

namespace fkgen::cli {

namespace {

namespace fs = std::filesystem;
using io::format_double;

// Creates the output directory, records the resolved config and returns the
// provenance comment shared by every artifact of the run.
std::string prepare_run(const Scenario& scenario) {
    fs::create_directories(scenario.out_dir);
    std::ofstream cfg(fs::path(scenario.out_dir) / "resolved_config.json", std::ios::binary);
    if (!cfg) throw FkError("cannot write resolved config in " + scenario.out_dir);
    nlohmann::json resolved = scenario.resolved;
    resolved["scenario_hash"] = scenario.hash();
    cfg << resolved.dump(2) << "\n";
    if (scenario.threads > 0) ThreadBudget::set(scenario.threads);
    return "seed=" + std::to_string(scenario.seed) + " scenario=" + scenario.hash();
}

std::string out_path(const Scenario& scenario, const std::string& file) {
    return (fs::path(scenario.out_dir) / file).string();
}

}  // namespace

int cmd_smooth(const Scenario& scenario) {
    const auto provenance = prepare_run(scenario);
    RunRequest request;
    request.smoothed = true;
    request.gamma = true;
    request.traces = true;
    request.final_values = true;
    const RunOutput run = run_replicate(scenario, 0, request);

    io::CsvWriter csv(out_path(scenario, "smooth_trace.csv"));
    csv.comment(provenance);
    const std::vector<std::string> header = {"epoch", "estimate", "log_normalizer"};
    csv.header(header);
    for (int p = 0; p <= scenario.horizon; ++p) {
        const std::vector<std::string> row = {std::to_string(p),
                                              format_double(run.smoothed_trace[p]),
                                              format_double(run.log_normalizer_trace[p])};
        csv.row(row);
    }
    csv.close();

    SmootherState state;
    state.epoch = scenario.horizon;
    state.values = run.smoother_values;
    io::write_smoother_state(state, scenario.functional.label,
                             out_path(scenario, "smoother_state.json"), scenario.seed,
                             scenario.hash());
    return kExitOk;
}

int cmd_genealogy(const Scenario& scenario) {
    const auto provenance = prepare_run(scenario);
    RunRequest request;
    request.genealogical = true;
    request.traces = true;
    const RunOutput run = run_replicate(scenario, 0, request);

    io::CsvWriter csv(out_path(scenario, "genealogy.csv"));
    csv.comment(provenance);
    const std::vector<std::string> header = {"epoch", "estimate", "distinct_roots"};
    csv.header(header);
    for (int p = 0; p <= scenario.horizon; ++p) {
        const std::vector<std::string> row = {std::to_string(p),
                                              format_double(run.genealogical_trace[p]),
                                              std::to_string(run.distinct_roots[p])};
        csv.row(row);
    }
    csv.close();
    return kExitOk;
}

int cmd_compare_variance(const Scenario& scenario) {
    const auto provenance = prepare_run(scenario);
    io::CsvWriter csv(out_path(scenario, "variance.csv"));
    csv.comment(provenance);
    const std::vector<std::string> header = {"n", "N", "estimator", "n_var", "fit_exponent",
                                             "fit_r2"};
    csv.header(header);

    std::vector<std::string> estimators;
    for (const auto& name : scenario.estimators)
        if (name == "genealogical" || name == "smoothed") estimators.push_back(name);

    for (const auto& estimator : estimators) {
        for (const int n_particles : scenario.grid_particles) {
            std::vector<double> horizons, n_vars;
            for (const int horizon : scenario.grid_horizons) {
                Scenario cell = scenario;
                cell.horizon = horizon;
                cell.particles = n_particles;
                cell.functional =
                    build_functional(cell.model, horizon, cell.functional_kind,
                                     cell.functional_term, cell.functional_normalized);
                const auto batch = stats::run_replicates(cell, {estimator}, scenario.replicates,
                                                         scenario.seed, scenario.threads);
                const double n_var =
                    n_particles * stats::sample_variance(batch.column(estimator));
                horizons.push_back(horizon);
                n_vars.push_back(n_var);
            }
            std::string fit_exponent, fit_r2;
            if (horizons.size() >= 2) {
                const auto fit = stats::variance_growth_fit(horizons, n_vars);
                fit_exponent = format_double(fit.exponent);
                fit_r2 = format_double(fit.r_squared);
            }
            for (std::size_t i = 0; i < horizons.size(); ++i) {
                const std::vector<std::string> row = {
                    std::to_string(static_cast<int>(horizons[i])),
                    std::to_string(n_particles),
                    estimator,
                    format_double(n_vars[i]),
                    fit_exponent,
                    fit_r2};
                csv.row(row);
            }
        }
    }
    csv.close();
    return kExitOk;
}

int cmd_oracle_check(const Scenario& scenario) {
    const auto provenance = prepare_run(scenario);
    const FiniteStateModel& fsm = scenario.model;
    fsm.validate();  // corrupted fixtures fail before any checks run

    struct CheckRow {
        std::string check, detail;
        double value, threshold;
        bool pass;
    };
    std::vector<CheckRow> rows;
    auto add = [&](const std::string& check, const std::string& detail, double value,
                   double threshold) {
        rows.push_back({check, detail, value, threshold, value <= threshold});
    };

    const int n = scenario.horizon;
    const auto flow = oracle::exact_flow(fsm, n);
    const auto identities = oracle::identity_suite(fsm, n, scenario.functional, scenario.seed);
    add("flow-cross-check", "recursion vs multiplicative formula", identities.flow_error, 1e-12);
    add("duality", "Psi_G(eta)(f M g) vs Phi(eta)(g M_eta f)", identities.duality_error, 1e-12);
    add("backward-decomposition", "path measure vs backward chain, atomwise",
        identities.backward_decomposition_error, 1e-12);
    add("arbitrary-start", "backward representation over 10 random starting laws",
        identities.arbitrary_start_error, 1e-12);
    add("semigroup", "Gamma_n(F) = gamma_p D_pn(F), all p", identities.semigroup_error, 1e-12);

    // unbiasedness of gamma_n^N(1) and Gamma_n^N(F) over the replicate batch
    {
        const auto batch = stats::run_replicates(scenario, {"gamma", "gamma_smoothed"},
                                                 scenario.replicates, scenario.seed,
                                                 scenario.threads);
        const auto gamma_v = stats::unbiasedness_test(batch.column("gamma"), flow.normalizer[n]);
        rows.push_back({"unbiased-gamma", "mean gamma vs Z_n (|z|)", std::abs(gamma_v.z), 3.0,
                        gamma_v.pass});
        FiniteFunctional raw = scenario.functional;
        raw.normalized = false;
        const double gamma_f =
            oracle::exact_smoothed_additive(fsm, n, raw) * flow.normalizer[n] /
            scenario.functional.normalizer(n);
        const auto gs_v = stats::unbiasedness_test(batch.column("gamma_smoothed"), gamma_f);
        rows.push_back(
            {"unbiased-gamma-smoothed", "mean Gamma^N(F) vs Gamma(F) (|z|)", std::abs(gs_v.z), 3.0,
             gs_v.pass});
    }

    io::CsvWriter csv(out_path(scenario, "oracle_report.csv"));
    csv.comment(provenance);
    const std::vector<std::string> header = {"check", "detail", "value", "threshold", "pass"};
    csv.header(header);
    bool all_pass = true;
    for (const auto& row : rows) {
        all_pass = all_pass && row.pass;
        const std::vector<std::string> fields = {row.check, row.detail, format_double(row.value),
                                                 format_double(row.threshold),
                                                 row.pass ? "true" : "false"};
        csv.row(fields);
        std::cout << (row.pass ? "[pass] " : "[FAIL] ") << row.check << " value="
                  << format_double(row.value) << " threshold=" << format_double(row.threshold)
                  << "\n";
    }
    csv.close();
    return all_pass ? kExitOk : kExitStatistical;
}

int cmd_hprocess(const Scenario& scenario) {
    const auto provenance = prepare_run(scenario);
    if (!scenario.model.homogeneous)
        throw ConfigError("hprocess requires a time-homogeneous model");
    const auto hp = oracle::h_process(scenario.model);
    std::vector<double> f(scenario.model.state_count);
    for (int x = 0; x < scenario.model.state_count; ++x) f[x] = scenario.model.value_of(x);
    const double mu_h_f = dot(hp.mu_h, f);

    std::vector<int> horizons = scenario.hprocess_horizons;
    if (horizons.empty()) horizons.push_back(scenario.horizon);

    io::CsvWriter csv(out_path(scenario, "hprocess.csv"));
    csv.comment(provenance);
    csv.comment("eigenvalue=" + format_double(hp.eigenvalue) +
                " stationary_gap=" + format_double(hp.stationary_gap));
    const std::vector<std::string> header = {"n", "mean_estimate", "replicate_std", "mu_h_f",
                                             "gap"};
    csv.header(header);
    for (const int n : horizons) {
        Scenario cell = scenario;
        cell.horizon = n;
        cell.functional =
            build_functional(cell.model, n, "terminal-additive", cell.functional_term, true);
        const auto batch = stats::run_replicates(cell, {"smoothed"}, scenario.replicates,
                                                 scenario.seed, scenario.threads);
        const double m = stats::mean(batch.column("smoothed"));
        const double sd =
            batch.replicates > 1 ? stats::sample_stddev(batch.column("smoothed")) : 0.0;
        const std::vector<std::string> row = {std::to_string(n), format_double(m),
                                              format_double(sd), format_double(mu_h_f),
                                              format_double(std::abs(m - mu_h_f))};
        csv.row(row);
    }
    csv.close();
    return kExitOk;
}

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ModelContractError& e) {
        std::cerr << "model contract violation: " << e.what() << "\n";
        return kExitModelContract;
    } catch (const StatisticalFailure& e) {
        std::cerr << "statistical failure: " << e.what() << "\n";
        return kExitStatistical;
    } catch (const CapExceededError& e) {
        std::cerr << "cap exceeded: " << e.what() << "\n";
        return kExitCapExceeded;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::out_of_range& e) {
        std::cerr << "out of range: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace fkgen::cli
