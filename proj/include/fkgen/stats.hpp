#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fkgen/scenario.hpp"

namespace fkgen::stats {

// Khintchine constants from the factorial moment bounds
//   a_{2r}^{2r} <= (2r)! 2^{-r} / r!   and   a_{2r+1}^{2r+1} <= (2r+1)! 2^{-r} / r!
// (smallest values satisfying the bounds). a_2 = 1.
double khintchine_a(int r);

double mean(std::span<const double> v);
double sample_variance(std::span<const double> v);  // unbiased, R-1 divisor
double sample_stddev(std::span<const double> v);

// R independent end-to-end runs of one scenario. Replicate r draws from the
// stream family keyed by (base_seed, r); partitioning across workers cannot
// change any draw.
struct ReplicateBatch {
    std::string scenario_id;
    std::string scenario_hash;
    uint64_t base_seed = 0;
    int particles = 0;
    int horizon = 0;
    int replicates = 0;
    std::vector<std::string> estimators;
    std::vector<std::vector<double>> values;  // [estimator][replicate]

    std::span<const double> column(const std::string& estimator) const;
};

ReplicateBatch run_replicates(const Scenario& scenario,
                              const std::vector<std::string>& estimators, int replicates,
                              uint64_t base_seed, int parallelism = 0);

// CSV persistence (one row per replicate, one column per estimator) plus a
// JSON sidecar describing the scenario.
void save_batch(const ReplicateBatch& batch, const std::string& csv_path,
                const std::string& sidecar_path);
ReplicateBatch load_batch(const std::string& csv_path, const std::string& sidecar_path);

// z-test of E[estimator] = oracle_value at the 3-sigma level. A degenerate
// (zero-variance) batch passes exactly when every value equals the oracle.
struct UnbiasednessVerdict {
    double mean = 0.0;
    double stddev = 0.0;
    double z = 0.0;
    bool pass = false;
};
UnbiasednessVerdict unbiasedness_test(std::span<const double> values, double oracle_value);

// Least-squares slope of log(N Var) against log(horizon).
struct PowerFit {
    double exponent = 0.0;
    double r_squared = 0.0;
};
PowerFit variance_growth_fit(std::span<const double> horizons, std::span<const double> n_var);

// Empirical tail frequencies of |value - oracle| >= b/sqrt(N) + eps against
// the Gaussian concentration bound exp(-N eps^2 / (2 b^2)), with binomial
// 3-sigma slack.
struct TailRow {
    double epsilon = 0.0;
    double threshold = 0.0;
    double empirical = 0.0;
    double bound = 0.0;
    double slack = 0.0;
    bool pass = false;
};
std::vector<TailRow> concentration_check(std::span<const double> values, double oracle_value,
                                         int particles, double b,
                                         std::span<const double> epsilons);

// Frozen-cloud one-step local error field V_n^N(f): z-test of conditional
// mean 0 and comparison of the sample variance with the exact one-step value.
struct LocalFieldVerdict {
    double z = 0.0;
    double sample_variance = 0.0;
    double conditional_variance = 0.0;  // exact, given the frozen cloud
    double asymptotic_variance = 0.0;   // one-step variance at the exact flow
    bool mean_pass = false;
    bool variance_pass = false;  // sample vs asymptotic within rel_tol
};
LocalFieldVerdict local_error_field(const Scenario& scenario,
                                    std::span<const int> frozen_positions, int target_epoch,
                                    std::span<const double> f_by_state, int replicates,
                                    uint64_t seed, double rel_tol = 0.10);

}  // namespace fkgen::stats
