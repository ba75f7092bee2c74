#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fkgen/scenario.hpp"

namespace fkgen {

struct RunRequest {
    bool smoothed = false;         // Q_n^N(F) by the forward-only recursion
    bool gamma = false;            // gamma_n^N(1)
    bool genealogical = false;     // ancestral-line estimate of F
    bool filter_terminal = false;  // eta_n^N(value map) at the final epoch
    bool traces = false;           // per-epoch traces
    bool final_values = false;     // keep the final per-particle F_n^N values
};

struct RunOutput {
    double smoothed = 0.0;
    double gamma = 1.0;
    double genealogical = 0.0;
    double filter_terminal = 0.0;
    double log_normalizer = 0.0;
    std::vector<double> smoothed_trace;        // Q_p^N(F_p), p = 0..n
    std::vector<double> genealogical_trace;    // ancestral estimate of F_p
    std::vector<int> distinct_roots;           // surviving epoch-0 ancestors
    std::vector<double> log_normalizer_trace;  // log gamma_p^N(1)
    std::vector<double> smoother_values;       // F_n^N per particle (final_values)
};

// One end-to-end particle run on a finite-state scenario. Draws the same
// random numbers as the generic templated path (identical stream layout),
// but evaluates densities through the model tables and advances the
// smoother with per-state aggregation, O(N + d^2) per epoch instead of
// O(N^2). The generic recursion remains the contract; equality of the two
// routes is covered by tests.
RunOutput run_replicate(const Scenario& scenario, uint32_t replicate, const RunRequest& request);

// One-step experiment with a frozen previous cloud: R independent
// select+mutate transitions from `frozen_positions` at epoch target-1,
// returning eta_target^N(f) per replicate. Used for the local error field.
std::vector<double> one_step_field_samples(const Scenario& scenario,
                                           std::span<const int> frozen_positions, int target_epoch,
                                           std::span<const double> f_by_state, int replicates,
                                           uint64_t seed, int threads = 0);

}  // namespace fkgen
