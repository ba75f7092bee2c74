#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fkgen/errors.hpp"
#include "fkgen/functional.hpp"
#include "fkgen/rng.hpp"

namespace fkgen {

// Feynman-Kac model over an opaque state type: initial law eta_0, mutation
// kernels M_n with densities H_n w.r.t. implicit reference measures, and
// (0,1]-valued potentials G_n. Evaluation hooks must be pure; the library
// never mutates a model after construction and calls hooks concurrently.
template <typename State>
struct FeynmanKacModel {
    using InitFn = std::function<State(RngStream&)>;
    using MutateFn = std::function<State(int, const State&, RngStream&)>;
    using DensityFn = std::function<double(int, const State&, const State&)>;
    using PotentialFn = std::function<double(int, const State&)>;

    InitFn initial_sampler;
    MutateFn mutation_sampler;           // epoch n >= 1: draw from M_n(x, .)
    DensityFn transition_density;        // H_n(x, y) > 0
    DensityFn log_transition_density;    // optional; log H_n(x, y)
    PotentialFn potential;               // G_n(x) in (0,1]
    int horizon = 0;

    bool has_log_density() const { return static_cast<bool>(log_transition_density); }

    void check_potential_epoch(int n) const {
        if (n < 0 || n > horizon)
            throw std::out_of_range("potential epoch " + std::to_string(n) +
                                    " outside [0," + std::to_string(horizon) + "]");
    }

    void check_transition_epoch(int n) const {
        if (n < 1 || n > horizon)
            throw std::out_of_range("transition epoch " + std::to_string(n) +
                                    " outside [1," + std::to_string(horizon) + "]");
    }

    double potential_at(int n, const State& x) const {
        check_potential_epoch(n);
        return potential(n, x);
    }

    // H_n(x, y); a non-positive value is a breach of condition (H).
    double density_at(int n, const State& x, const State& y) const {
        check_transition_epoch(n);
        const double h = transition_density(n, x, y);
        if (!(h > 0.0))
            throw ModelContractError("transition density H_" + std::to_string(n) +
                                     " is not strictly positive (condition (H) fails)");
        return h;
    }

    double log_density_at(int n, const State& x, const State& y) const {
        check_transition_epoch(n);
        if (log_transition_density) return log_transition_density(n, x, y);
        return std::log(density_at(n, x, y));
    }
};

struct ValidationIssue {
    int epoch = 0;
    std::string kind;    // "potential-range" | "density-nonpositive" | "evaluation"
    double value = 0.0;
    std::string detail;
};

struct ValidationReport {
    int probes = 0;
    uint64_t seed = 0;
    std::vector<ValidationIssue> violations;

    bool passed() const { return violations.empty(); }

    std::string summary() const {
        std::ostringstream os;
        os << "probes=" << probes << " violations=" << violations.size();
        for (const auto& v : violations)
            os << "\n  epoch " << v.epoch << " [" << v.kind << "] value=" << v.value << " "
               << v.detail;
        return os.str();
    }
};

// Sampling check of the standing assumptions: G in (0,1] and H > 0 along
// probe_count simulated trajectories. Deterministic in the seed.
template <typename State>
ValidationReport validate_model(const FeynmanKacModel<State>& model, int probe_count,
                                uint64_t rng_seed) {
    if (probe_count < 1) throw std::invalid_argument("probe_count must be >= 1");
    ValidationReport report;
    report.probes = probe_count;
    report.seed = rng_seed;
    const RunKey key{rng_seed, 0};

    for (int probe = 0; probe < probe_count; ++probe) {
        State x = [&] {
            auto s = key.stream(0, static_cast<uint32_t>(probe), StreamPurpose::Probe);
            return model.initial_sampler(s);
        }();
        for (int n = 0; n <= model.horizon; ++n) {
            double g = 0.0;
            try {
                g = model.potential(n, x);
            } catch (const std::exception& e) {
                report.violations.push_back(
                    {n, "evaluation", 0.0, std::string("potential threw: ") + e.what()});
                break;
            }
            if (!(g > 0.0) || g > 1.0)
                report.violations.push_back({n, "potential-range", g, "G outside (0,1]"});
            if (n == model.horizon) break;
            auto s = key.stream(static_cast<uint32_t>(n + 1), static_cast<uint32_t>(probe),
                                StreamPurpose::Probe);
            State y;
            double h = 0.0;
            try {
                y = model.mutation_sampler(n + 1, x, s);
                h = model.transition_density(n + 1, x, y);
            } catch (const std::exception& e) {
                report.violations.push_back(
                    {n + 1, "evaluation", 0.0, std::string("transition threw: ") + e.what()});
                break;
            }
            if (!(h > 0.0))
                report.violations.push_back(
                    {n + 1, "density-nonpositive", h, "H <= 0 on a sampled pair"});
            x = y;
        }
    }
    return report;
}

}  // namespace fkgen
