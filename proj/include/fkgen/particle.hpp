#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fkgen/errors.hpp"
#include "fkgen/model.hpp"
#include "fkgen/parallel.hpp"
#include "fkgen/rng.hpp"

namespace fkgen {

// One epoch of the N-particle system. parent_index[i] is the index of the
// ancestor selected at the previous epoch (0-based; empty at epoch 0).
// log_normalizer accumulates log gamma_n^N(1) = sum_{p<n} log eta_p^N(G_p).
template <typename State>
struct ParticleCloud {
    int epoch = 0;
    std::vector<State> positions;
    std::vector<int32_t> parent_index;
    double log_normalizer = 0.0;

    int size() const { return static_cast<int>(positions.size()); }
};

enum class EpsilonRule {
    Zero,           // simple genetic model: always resample
    ReciprocalSup,  // eps_n = 1 / max_i G_n(xi_n^i)
    Fixed,          // user value, clamped so that eps_n * max_i G_n <= 1
};

struct SelectionConfig {
    EpsilonRule rule = EpsilonRule::Zero;
    double fixed_epsilon = 0.0;
    // Multinomial (iid categorical) resampling is the contract; the variance
    // oracle assumes it.
};

// Output of the selection stage: kept/resampled states plus the realized
// ancestor indices, and the epoch's log mean weight for the normalizer.
template <typename State>
struct SelectionResult {
    int epoch = 0;
    std::vector<State> positions;
    std::vector<int32_t> ancestor;
    double log_mean_weight = 0.0;
    double realized_epsilon = 0.0;
};

template <typename State>
struct CloudHistory {
    std::vector<ParticleCloud<State>> clouds;

    int horizon() const { return static_cast<int>(clouds.size()) - 1; }
    int particle_count() const { return clouds.empty() ? 0 : clouds.front().size(); }
    const ParticleCloud<State>& at(int epoch) const { return clouds.at(epoch); }
};

template <typename State>
ParticleCloud<State> init_cloud(const FeynmanKacModel<State>& model, int particle_count,
                                const RunKey& key) {
    if (particle_count < 1) throw std::invalid_argument("particle count must be >= 1");
    ParticleCloud<State> cloud;
    cloud.epoch = 0;
    cloud.positions.resize(particle_count);
    parallel_blocks(static_cast<std::size_t>(particle_count), 0,
                    [&](std::size_t begin, std::size_t end) {
                        for (std::size_t i = begin; i < end; ++i) {
                            auto rng = key.stream(0, static_cast<uint32_t>(i), StreamPurpose::Init);
                            cloud.positions[i] = model.initial_sampler(rng);
                        }
                    });
    cloud.log_normalizer = 0.0;
    return cloud;
}

// Selection stage at the cloud's epoch: keep particle i with probability
// eps_n G_n(xi^i), otherwise draw a replacement proportional to the weights.
template <typename State>
SelectionResult<State> select(const ParticleCloud<State>& cloud,
                              const FeynmanKacModel<State>& model, const SelectionConfig& config,
                              const RunKey& key) {
    const int n = cloud.epoch;
    const int count = cloud.size();
    std::vector<double> weights(count);
    for (int i = 0; i < count; ++i) weights[i] = model.potential_at(n, cloud.positions[i]);

    const double total = pairwise_sum(weights);
    if (!(total > 0.0))
        throw ModelContractError("degenerate selection weights (sum G = 0) at epoch " +
                                 std::to_string(n));

    double epsilon = 0.0;
    const double max_weight = *std::max_element(weights.begin(), weights.end());
    switch (config.rule) {
        case EpsilonRule::Zero:
            epsilon = 0.0;
            break;
        case EpsilonRule::ReciprocalSup:
            epsilon = 1.0 / max_weight;
            break;
        case EpsilonRule::Fixed:
            if (config.fixed_epsilon < 0.0)
                throw std::invalid_argument("fixed epsilon must be >= 0");
            epsilon = std::min(config.fixed_epsilon, 1.0 / max_weight);
            break;
    }

    std::vector<double> cumulative(count);
    double acc = 0.0;
    for (int i = 0; i < count; ++i) {
        acc += weights[i];
        cumulative[i] = acc;
    }

    SelectionResult<State> out;
    out.epoch = n;
    out.positions.resize(count);
    out.ancestor.resize(count);
    out.log_mean_weight = std::log(total / count);
    out.realized_epsilon = epsilon;

    parallel_blocks(static_cast<std::size_t>(count), 0, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto rng = key.stream(static_cast<uint32_t>(n), static_cast<uint32_t>(i),
                                  StreamPurpose::Select);
            const double keep_u = rng.next_double();
            int ancestor = static_cast<int>(i);
            if (!(keep_u < epsilon * weights[i])) {
                ancestor = categorical_pick(cumulative, rng.next_double());
            }
            out.ancestor[i] = static_cast<int32_t>(ancestor);
            out.positions[i] = cloud.positions[ancestor];
        }
    });
    return out;
}

// Mutation stage: every selected particle moves independently through
// M_{n+1}; the normalizer picks up log eta_n^N(G_n).
template <typename State>
ParticleCloud<State> mutate(const SelectionResult<State>& selected,
                            const FeynmanKacModel<State>& model, double prev_log_normalizer,
                            const RunKey& key) {
    const int next_epoch = selected.epoch + 1;
    if (next_epoch > model.horizon)
        throw std::out_of_range("mutation to epoch " + std::to_string(next_epoch) +
                                " exceeds horizon " + std::to_string(model.horizon));
    const int count = static_cast<int>(selected.positions.size());
    ParticleCloud<State> cloud;
    cloud.epoch = next_epoch;
    cloud.positions.resize(count);
    cloud.parent_index = selected.ancestor;
    cloud.log_normalizer = prev_log_normalizer + selected.log_mean_weight;
    parallel_blocks(static_cast<std::size_t>(count), 0, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto rng = key.stream(static_cast<uint32_t>(next_epoch), static_cast<uint32_t>(i),
                                  StreamPurpose::Mutate);
            cloud.positions[i] = model.mutation_sampler(next_epoch, selected.positions[i], rng);
        }
    });
    return cloud;
}

// Full genetic run, retaining every cloud (the smoother and the genealogy
// both need the history).
template <typename State>
CloudHistory<State> run_filter(const FeynmanKacModel<State>& model, int particle_count,
                               const SelectionConfig& config, int horizon, const RunKey& key) {
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    if (horizon > model.horizon)
        throw std::out_of_range("requested horizon exceeds the model horizon");
    CloudHistory<State> history;
    history.clouds.reserve(horizon + 1);
    history.clouds.push_back(init_cloud(model, particle_count, key));
    for (int n = 0; n < horizon; ++n) {
        const auto& cloud = history.clouds.back();
        auto selected = select(cloud, model, config, key);
        history.clouds.push_back(mutate(selected, model, cloud.log_normalizer, key));
    }
    return history;
}

// eta_n^N(f) = (1/N) sum_j f(xi_n^j), with the deterministic tree reduction.
template <typename State, typename Fn>
double empirical_measure(const ParticleCloud<State>& cloud, Fn&& f) {
    std::vector<double> values(cloud.positions.size());
    for (std::size_t j = 0; j < cloud.positions.size(); ++j) values[j] = f(cloud.positions[j]);
    return pairwise_sum(values) / static_cast<double>(values.size());
}

// Ancestral line of particle `index` at the final epoch: indices per epoch
// 0..n. Chains always reference strictly earlier epochs, so no cycles.
template <typename State>
std::vector<int> ancestral_line(const CloudHistory<State>& history, int index) {
    const int n = history.horizon();
    std::vector<int> line(n + 1);
    line[n] = index;
    for (int q = n; q >= 1; --q) {
        const auto& parents = history.at(q).parent_index;
        if (parents.empty()) throw FkError("history is missing parent indices at epoch " +
                                           std::to_string(q));
        line[q - 1] = parents[line[q]];
    }
    return line;
}

// Genealogical-tree estimate: (1/N) sum_i F_n(ancestral line of particle i).
template <typename State>
double genealogical_estimate(const CloudHistory<State>& history,
                             const PathFunctional<State>& functional) {
    const int n = history.horizon();
    functional.check_horizon(n);
    const int count = history.particle_count();
    std::vector<double> values(count);
    std::vector<State> path(n + 1);
    std::vector<int> line;
    for (int i = 0; i < count; ++i) {
        line = ancestral_line(history, i);
        for (int q = 0; q <= n; ++q) path[q] = history.at(q).positions[line[q]];
        values[i] = functional.eval_path(path);
    }
    return pairwise_sum(values) / static_cast<double>(count) / functional.normalizer(n);
}

}  // namespace fkgen
