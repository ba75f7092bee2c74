#include "fkgen/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fkgen/io.hpp"
#include "fkgen/oracle.hpp"
#include "fkgen/parallel.hpp"
#include "fkgen/runner.hpp"

namespace fkgen::stats {

double khintchine_a(int r) {
    if (r < 1) throw std::invalid_argument("Khintchine order must be >= 1");
    auto log_factorial = [](int k) { return std::lgamma(static_cast<double>(k) + 1.0); };
    auto raw = [&](int order) {
        if (order % 2 == 0) {
            const int s = order / 2;
            return std::exp((log_factorial(2 * s) - s * std::log(2.0) - log_factorial(s)) /
                            (2 * s));
        }
        const int s = (order - 1) / 2;
        return std::exp((log_factorial(2 * s + 1) - s * std::log(2.0) - log_factorial(s)) /
                        (2 * s + 1));
    };
    // The moment recursion alone is not monotone across parities (e.g. the
    // order-3 value 3^(1/3) exceeds the order-4 value 3^(1/4)). L^r norms are
    // nondecreasing in r, so any constant valid at a higher order is valid
    // below it; the smallest valid value is the tail minimum.
    double a = raw(r);
    for (int order = r + 1; order <= r + 8; ++order) a = std::min(a, raw(order));
    return a;
}

double mean(std::span<const double> v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw std::invalid_argument("sample variance needs at least two values");
    const double m = mean(v);
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
    return pairwise_sum(sq) / static_cast<double>(v.size() - 1);
}

double sample_stddev(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

std::span<const double> ReplicateBatch::column(const std::string& estimator) const {
    for (std::size_t k = 0; k < estimators.size(); ++k)
        if (estimators[k] == estimator) return values[k];
    throw FkError("batch has no estimator column named '" + estimator + "'");
}

ReplicateBatch run_replicates(const Scenario& scenario,
                              const std::vector<std::string>& estimators, int replicates,
                              uint64_t base_seed, int parallelism) {
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    RunRequest request;
    for (const auto& name : estimators) {
        if (name == "smoothed") request.smoothed = true;
        else if (name == "gamma") request.gamma = true;
        else if (name == "gamma_smoothed") { request.gamma = true; request.smoothed = true; }
        else if (name == "genealogical") request.genealogical = true;
        else if (name == "filter") request.filter_terminal = true;
        else throw ConfigError("unknown estimator '" + name + "'");
    }

    ReplicateBatch batch;
    batch.scenario_id = scenario.id();
    batch.scenario_hash = scenario.hash();
    batch.base_seed = base_seed;
    batch.particles = scenario.particles;
    batch.horizon = scenario.horizon;
    batch.replicates = replicates;
    batch.estimators = estimators;
    batch.values.assign(estimators.size(), std::vector<double>(replicates));

    Scenario run_scenario = scenario;
    run_scenario.seed = base_seed;
    const int workers = parallelism > 0 ? parallelism
                        : scenario.threads > 0 ? scenario.threads
                                               : 0;
    parallel_blocks(static_cast<std::size_t>(replicates), workers,
                    [&](std::size_t begin, std::size_t end) {
                        for (std::size_t r = begin; r < end; ++r) {
                            const RunOutput out =
                                run_replicate(run_scenario, static_cast<uint32_t>(r), request);
                            for (std::size_t k = 0; k < estimators.size(); ++k) {
                                const auto& name = estimators[k];
                                double v = 0.0;
                                if (name == "smoothed") v = out.smoothed;
                                else if (name == "gamma") v = out.gamma;
                                else if (name == "gamma_smoothed") v = out.gamma * out.smoothed;
                                else if (name == "genealogical") v = out.genealogical;
                                else if (name == "filter") v = out.filter_terminal;
                                batch.values[k][r] = v;
                            }
                        }
                    });
    return batch;
}

void save_batch(const ReplicateBatch& batch, const std::string& csv_path,
                const std::string& sidecar_path) {
    io::CsvWriter csv(csv_path);
    csv.comment("seed=" + std::to_string(batch.base_seed) + " scenario=" + batch.scenario_hash);
    std::vector<std::string> header = {"replicate"};
    header.insert(header.end(), batch.estimators.begin(), batch.estimators.end());
    csv.header(header);
    std::vector<std::string> row(header.size());
    for (int r = 0; r < batch.replicates; ++r) {
        row[0] = std::to_string(r);
        for (std::size_t k = 0; k < batch.estimators.size(); ++k)
            row[k + 1] = io::format_double(batch.values[k][r]);
        csv.row(row);
    }
    csv.close();

    nlohmann::json sidecar{{"scenario_id", batch.scenario_id},
                           {"scenario_hash", batch.scenario_hash},
                           {"base_seed", batch.base_seed},
                           {"N", batch.particles},
                           {"horizon", batch.horizon},
                           {"replicates", batch.replicates},
                           {"estimators", batch.estimators}};
    std::ofstream side(sidecar_path, std::ios::binary);
    if (!side) throw FkError("cannot open sidecar file: " + sidecar_path);
    side << sidecar.dump(2) << "\n";
}

ReplicateBatch load_batch(const std::string& csv_path, const std::string& sidecar_path) {
    std::ifstream side(sidecar_path);
    if (!side) throw FkError("cannot open sidecar file: " + sidecar_path);
    nlohmann::json sidecar;
    side >> sidecar;

    ReplicateBatch batch;
    batch.scenario_id = sidecar.at("scenario_id").get<std::string>();
    batch.scenario_hash = sidecar.at("scenario_hash").get<std::string>();
    batch.base_seed = sidecar.at("base_seed").get<uint64_t>();
    batch.particles = sidecar.at("N").get<int>();
    batch.horizon = sidecar.at("horizon").get<int>();
    batch.replicates = sidecar.at("replicates").get<int>();
    batch.estimators = sidecar.at("estimators").get<std::vector<std::string>>();
    batch.values.assign(batch.estimators.size(), {});

    std::ifstream csv(csv_path);
    if (!csv) throw FkError("cannot open batch file: " + csv_path);
    std::string line;
    bool header_seen = false;
    while (std::getline(csv, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;  // column names are fixed by the sidecar
            continue;
        }
        std::istringstream fields(line);
        std::string cell;
        std::getline(fields, cell, ',');  // replicate index
        for (std::size_t k = 0; k < batch.estimators.size(); ++k) {
            if (!std::getline(fields, cell, ','))
                throw FkError("short row in batch file: " + csv_path);
            batch.values[k].push_back(std::stod(cell));
        }
    }
    for (const auto& col : batch.values)
        if (static_cast<int>(col.size()) != batch.replicates)
            throw FkError("batch row count does not match the sidecar");
    return batch;
}

UnbiasednessVerdict unbiasedness_test(std::span<const double> values, double oracle_value) {
    UnbiasednessVerdict v;
    v.mean = mean(values);
    v.stddev = values.size() > 1 ? sample_stddev(values) : 0.0;
    if (v.stddev == 0.0) {
        v.z = v.mean == oracle_value ? 0.0 : std::numeric_limits<double>::infinity();
        v.pass = v.mean == oracle_value;
        return v;
    }
    v.z = std::sqrt(static_cast<double>(values.size())) * (v.mean - oracle_value) / v.stddev;
    v.pass = std::abs(v.z) <= 3.0;
    return v;
}

PowerFit variance_growth_fit(std::span<const double> horizons, std::span<const double> n_var) {
    if (horizons.size() != n_var.size() || horizons.size() < 2)
        throw std::invalid_argument("variance fit needs matching lists with >= 2 points");
    const std::size_t k = horizons.size();
    std::vector<double> lx(k), ly(k);
    for (std::size_t i = 0; i < k; ++i) {
        if (!(horizons[i] > 0.0) || !(n_var[i] > 0.0))
            throw std::invalid_argument("variance fit needs positive horizons and variances");
        lx[i] = std::log(horizons[i]);
        ly[i] = std::log(n_var[i]);
    }
    const double mx = mean(lx), my = mean(ly);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    PowerFit fit;
    fit.exponent = sxy / sxx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

std::vector<TailRow> concentration_check(std::span<const double> values, double oracle_value,
                                         int particles, double b,
                                         std::span<const double> epsilons) {
    if (!(b > 0.0)) throw std::invalid_argument("concentration constant b must be > 0");
    if (particles < 1) throw std::invalid_argument("particle count must be >= 1");
    const double r = static_cast<double>(values.size());
    std::vector<TailRow> rows;
    rows.reserve(epsilons.size());
    for (const double eps : epsilons) {
        TailRow row;
        row.epsilon = eps;
        row.threshold = b / std::sqrt(static_cast<double>(particles)) + eps;
        int exceed = 0;
        for (const double v : values)
            if (std::abs(v - oracle_value) >= row.threshold) ++exceed;
        row.empirical = exceed / r;
        row.bound = std::exp(-particles * eps * eps / (2.0 * b * b));
        row.slack = 3.0 * std::sqrt(std::max(row.bound * (1.0 - row.bound), 1.0 / r) / r);
        row.pass = row.empirical <= row.bound + row.slack;
        rows.push_back(row);
    }
    return rows;
}

LocalFieldVerdict local_error_field(const Scenario& scenario,
                                    std::span<const int> frozen_positions, int target_epoch,
                                    std::span<const double> f_by_state, int replicates,
                                    uint64_t seed, double rel_tol) {
    if (scenario.selection.rule != EpsilonRule::Zero)
        throw std::invalid_argument("local_error_field is defined for the epsilon = 0 scenario");
    const int count = static_cast<int>(frozen_positions.size());
    const int d = scenario.model.state_count;

    // Empirical measure of the frozen cloud and its exact one-step image.
    std::vector<double> eta_frozen(d, 0.0);
    for (const int x : frozen_positions) eta_frozen[x] += 1.0 / count;
    const auto phi = oracle::phi_step(scenario.model, target_epoch, eta_frozen);
    const double phi_f = dot(phi, f_by_state);

    const auto samples = one_step_field_samples(scenario, frozen_positions, target_epoch,
                                                f_by_state, replicates, seed);
    std::vector<double> field(samples.size());
    const double root_n = std::sqrt(static_cast<double>(count));
    for (std::size_t r = 0; r < samples.size(); ++r) field[r] = root_n * (samples[r] - phi_f);

    LocalFieldVerdict verdict;
    // Given the frozen cloud, positions are iid Phi(eta^N), so the exact
    // conditional variance of V is Var_Phi(f).
    double second = 0.0;
    for (int y = 0; y < d; ++y) second += phi[y] * f_by_state[y] * f_by_state[y];
    verdict.conditional_variance = second - phi_f * phi_f;
    verdict.asymptotic_variance = [&] {
        const auto flow = oracle::exact_flow(scenario.model, target_epoch);
        return oracle::local_sampling_variance(scenario.model, target_epoch,
                                               flow.eta[target_epoch - 1], f_by_state, 0.0);
    }();

    const double m = mean(field);
    if (verdict.conditional_variance == 0.0) {
        verdict.z = m == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        verdict.sample_variance = 0.0;
        verdict.mean_pass = m == 0.0;
        verdict.variance_pass = verdict.asymptotic_variance == 0.0;
        return verdict;
    }
    verdict.sample_variance = sample_variance(field);
    verdict.z = std::sqrt(static_cast<double>(field.size())) * m /
                std::sqrt(verdict.conditional_variance);
    verdict.mean_pass = std::abs(verdict.z) <= 3.0;
    verdict.variance_pass =
        std::abs(verdict.sample_variance - verdict.asymptotic_variance) <=
        rel_tol * verdict.asymptotic_variance;
    return verdict;
}

}  // namespace fkgen::stats
