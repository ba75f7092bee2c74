#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fkgen/errors.hpp"
#include "fkgen/model.hpp"
#include "fkgen/parallel.hpp"
#include "fkgen/particle.hpp"

namespace fkgen {

// Row-major N x N particle backward weights at epoch n:
//   W[j][i] = G_{n-1}(xi_{n-1}^i) H_n(xi_{n-1}^i, xi_n^j) / row normalizer.
// Row j is the backward kernel M_{n, eta_{n-1}^N}(xi_n^j, .) on particle
// atoms; every row sums to 1.
struct BackwardWeightMatrix {
    int epoch = 0;
    int n_particles = 0;
    std::vector<double> weights;

    std::span<const double> row(int j) const {
        return {weights.data() + static_cast<std::size_t>(j) * n_particles,
                static_cast<std::size_t>(n_particles)};
    }
    double at(int j, int i) const {
        return weights[static_cast<std::size_t>(j) * n_particles + i];
    }
};

// Materializes the backward weights between two consecutive clouds. Exactly
// N^2 evaluations of H_n. Rows are normalized with a max-shifted exponential
// when the model registers a log density, plain normalization otherwise.
template <typename State>
BackwardWeightMatrix backward_matrix(const ParticleCloud<State>& prev_cloud,
                                     const ParticleCloud<State>& cur_cloud,
                                     const FeynmanKacModel<State>& model) {
    if (cur_cloud.epoch != prev_cloud.epoch + 1)
        throw std::invalid_argument("backward_matrix needs consecutive epochs");
    if (cur_cloud.size() != prev_cloud.size())
        throw std::invalid_argument("backward_matrix needs equal particle counts");
    const int n = cur_cloud.epoch;
    const int count = cur_cloud.size();

    BackwardWeightMatrix out;
    out.epoch = n;
    out.n_particles = count;
    out.weights.resize(static_cast<std::size_t>(count) * count);

    const bool log_space = model.has_log_density();
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) {
        const double gi = model.potential_at(n - 1, prev_cloud.positions[i]);
        g[i] = log_space ? std::log(gi) : gi;
    }

    parallel_blocks(static_cast<std::size_t>(count), 0, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            double* row = out.weights.data() + j * count;
            if (log_space) {
                double max_term = -std::numeric_limits<double>::infinity();
                for (int i = 0; i < count; ++i) {
                    row[i] = g[i] + model.log_density_at(n, prev_cloud.positions[i],
                                                         cur_cloud.positions[j]);
                    max_term = std::max(max_term, row[i]);
                }
                double norm = 0.0;
                for (int i = 0; i < count; ++i) {
                    row[i] = std::exp(row[i] - max_term);
                    norm += row[i];
                }
                for (int i = 0; i < count; ++i) row[i] /= norm;
            } else {
                double norm = 0.0;
                for (int i = 0; i < count; ++i) {
                    row[i] = g[i] * model.density_at(n, prev_cloud.positions[i],
                                                     cur_cloud.positions[j]);
                    norm += row[i];
                }
                if (!(norm > 0.0))
                    throw ModelContractError(
                        "backward weight row has zero normalizer at epoch " + std::to_string(n) +
                        " (condition (H) violated)");
                for (int i = 0; i < count; ++i) row[i] /= norm;
            }
        }
    });
    return out;
}

// Per-particle values F_n^N(xi_n^j) carried by the forward-only recursion.
struct SmootherState {
    int epoch = 0;
    std::vector<double> values;
};

template <typename State>
SmootherState smoother_init(const ParticleCloud<State>& cloud0,
                            const PathFunctional<State>& functional) {
    if (cloud0.epoch != 0) throw std::invalid_argument("smoother starts at epoch 0");
    if (functional.kind == FunctionalKind::General)
        throw std::invalid_argument("no forward recursion exists for general path functionals");
    SmootherState state;
    state.epoch = 0;
    state.values.resize(cloud0.positions.size());
    for (std::size_t j = 0; j < cloud0.positions.size(); ++j)
        state.values[j] = functional.node_terms[0](cloud0.positions[j]);
    return state;
}

// One forward step of F_n^N = f_n + M_{n,eta^N}(F_{n-1}^N) (terminal terms),
// or the pairwise variant that averages f_n(xi_{n-1}^i, xi_n^j) under the
// backward weights.
template <typename State>
SmootherState forward_update(const SmootherState& state, const BackwardWeightMatrix& matrix,
                             const ParticleCloud<State>& prev_cloud,
                             const ParticleCloud<State>& cur_cloud,
                             const PathFunctional<State>& functional) {
    if (functional.kind == FunctionalKind::General)
        throw std::invalid_argument("no forward recursion exists for general path functionals");
    if (state.epoch + 1 != matrix.epoch || cur_cloud.epoch != matrix.epoch)
        throw std::invalid_argument("forward_update epochs are inconsistent");
    const int n = matrix.epoch;
    const int count = matrix.n_particles;

    SmootherState next;
    next.epoch = n;
    next.values.resize(count);
    std::vector<double> terms(count);

    parallel_blocks(static_cast<std::size_t>(count), 0, [&](std::size_t begin, std::size_t end) {
        std::vector<double> local(count);
        for (std::size_t j = begin; j < end; ++j) {
            const auto row = matrix.row(static_cast<int>(j));
            if (functional.kind == FunctionalKind::TerminalAdditive) {
                for (int i = 0; i < count; ++i) local[i] = row[i] * state.values[i];
                next.values[j] = functional.node_terms[n](cur_cloud.positions[j]) +
                                 pairwise_sum(local);
            } else {
                for (int i = 0; i < count; ++i)
                    local[i] = row[i] * (functional.pair_terms[n - 1](prev_cloud.positions[i],
                                                                      cur_cloud.positions[j]) +
                                         state.values[i]);
                next.values[j] = pairwise_sum(local);
            }
        }
    });
    return next;
}

// Row-streaming variant of backward_matrix + forward_update: each backward
// row is built, normalized and consumed in place, so memory stays O(N) while
// the work is still exactly N^2 density evaluations. Opt in for large N when
// the matrix is not reused across functionals.
template <typename State>
SmootherState forward_update_streaming(const SmootherState& state,
                                       const ParticleCloud<State>& prev_cloud,
                                       const ParticleCloud<State>& cur_cloud,
                                       const FeynmanKacModel<State>& model,
                                       const PathFunctional<State>& functional) {
    if (functional.kind == FunctionalKind::General)
        throw std::invalid_argument("no forward recursion exists for general path functionals");
    if (cur_cloud.epoch != prev_cloud.epoch + 1 || state.epoch != prev_cloud.epoch)
        throw std::invalid_argument("forward_update_streaming epochs are inconsistent");
    const int n = cur_cloud.epoch;
    const int count = cur_cloud.size();
    const bool log_space = model.has_log_density();

    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) {
        const double gi = model.potential_at(n - 1, prev_cloud.positions[i]);
        g[i] = log_space ? std::log(gi) : gi;
    }

    SmootherState next;
    next.epoch = n;
    next.values.resize(count);
    parallel_blocks(static_cast<std::size_t>(count), 0, [&](std::size_t begin, std::size_t end) {
        std::vector<double> row(count);
        std::vector<double> local(count);
        for (std::size_t j = begin; j < end; ++j) {
            if (log_space) {
                double max_term = -std::numeric_limits<double>::infinity();
                for (int i = 0; i < count; ++i) {
                    row[i] = g[i] + model.log_density_at(n, prev_cloud.positions[i],
                                                         cur_cloud.positions[j]);
                    max_term = std::max(max_term, row[i]);
                }
                double norm = 0.0;
                for (int i = 0; i < count; ++i) {
                    row[i] = std::exp(row[i] - max_term);
                    norm += row[i];
                }
                for (int i = 0; i < count; ++i) row[i] /= norm;
            } else {
                double norm = 0.0;
                for (int i = 0; i < count; ++i) {
                    row[i] = g[i] * model.density_at(n, prev_cloud.positions[i],
                                                     cur_cloud.positions[j]);
                    norm += row[i];
                }
                if (!(norm > 0.0))
                    throw ModelContractError(
                        "backward weight row has zero normalizer at epoch " + std::to_string(n) +
                        " (condition (H) violated)");
                for (int i = 0; i < count; ++i) row[i] /= norm;
            }
            if (functional.kind == FunctionalKind::TerminalAdditive) {
                for (int i = 0; i < count; ++i) local[i] = row[i] * state.values[i];
                next.values[j] = functional.node_terms[n](cur_cloud.positions[j]) +
                                 pairwise_sum(local);
            } else {
                for (int i = 0; i < count; ++i)
                    local[i] = row[i] * (functional.pair_terms[n - 1](prev_cloud.positions[i],
                                                                      cur_cloud.positions[j]) +
                                         state.values[i]);
                next.values[j] = pairwise_sum(local);
            }
        }
    });
    return next;
}

// Q_n^N(F_n) = eta_n^N(F_n^N); divides by (n+1) for normalized functionals.
template <typename State>
double smoothed_estimate(const SmootherState& state, const ParticleCloud<State>& cloud,
                         const PathFunctional<State>& functional) {
    if (state.epoch != cloud.epoch)
        throw std::invalid_argument("smoother state and cloud epochs differ");
    const double mean =
        pairwise_sum(state.values) / static_cast<double>(state.values.size());
    return mean / functional.normalizer(state.epoch);
}

// Streaming smoother run: filter + forward recursion, retaining only the
// previous cloud and the SmootherState.
struct SmootherRun {
    double estimate = 0.0;
    double log_normalizer = 0.0;
    std::vector<double> per_epoch;  // Q_p^N(F_p) trace, p = 0..n
    SmootherState final_state;
};

template <typename State>
SmootherRun run_smoother(const FeynmanKacModel<State>& model, int particle_count,
                         const SelectionConfig& config, int horizon,
                         const PathFunctional<State>& functional, const RunKey& key) {
    functional.check_horizon(horizon);
    SmootherRun out;
    ParticleCloud<State> cloud = init_cloud(model, particle_count, key);
    SmootherState state = smoother_init(cloud, functional);
    out.per_epoch.push_back(pairwise_sum(state.values) / particle_count /
                            functional.normalizer(0));
    for (int n = 0; n < horizon; ++n) {
        auto selected = select(cloud, model, config, key);
        ParticleCloud<State> next = mutate(selected, model, cloud.log_normalizer, key);
        const auto matrix = backward_matrix(cloud, next, model);
        state = forward_update(state, matrix, cloud, next, functional);
        cloud = std::move(next);
        out.per_epoch.push_back(pairwise_sum(state.values) / particle_count /
                                functional.normalizer(n + 1));
    }
    out.estimate = out.per_epoch.back();
    out.log_normalizer = cloud.log_normalizer;
    out.final_state = std::move(state);
    return out;
}

// Draws one path from the particle backward measure: terminal particle
// index uniform on the final cloud, then backward through the reversal
// kernels.
// Rows of the backward matrices are recomputed on demand.
template <typename State>
std::vector<State> sample_backward_path(const CloudHistory<State>& history,
                                        const FeynmanKacModel<State>& model, const RunKey& key,
                                        uint32_t path_index = 0) {
    const int n = history.horizon();
    const int count = history.particle_count();
    std::vector<int> idx(n + 1);
    {
        auto rng = key.stream(static_cast<uint32_t>(n), path_index, StreamPurpose::PathSample);
        idx[n] = static_cast<int>(rng.next_double() * count);
        if (idx[n] >= count) idx[n] = count - 1;
    }
    std::vector<double> cumulative(count);
    for (int q = n; q >= 1; --q) {
        const auto& prev = history.at(q - 1);
        const auto& cur = history.at(q);
        double acc = 0.0;
        for (int i = 0; i < count; ++i) {
            const double gi = model.potential_at(q - 1, prev.positions[i]);
            acc += gi * model.density_at(q, prev.positions[i], cur.positions[idx[q]]);
            cumulative[i] = acc;
        }
        if (!(acc > 0.0))
            throw ModelContractError("zero backward row normalizer at epoch " + std::to_string(q));
        auto rng = key.stream(static_cast<uint32_t>(q - 1), path_index, StreamPurpose::PathSample);
        idx[q - 1] = categorical_pick(cumulative, rng.next_double());
    }
    std::vector<State> path(n + 1);
    for (int q = 0; q <= n; ++q) path[q] = history.at(q).positions[idx[q]];
    return path;
}

namespace detail {

// Exhaustive sum over all N^(n+1) particle index paths of Q_n^N mass times F.
template <typename State>
double enumerate_backward_measure(const CloudHistory<State>& history,
                                  const std::vector<BackwardWeightMatrix>& matrices,
                                  const PathFunctional<State>& functional, std::size_t cap) {
    const int n = history.horizon();
    const int count = history.particle_count();
    double atoms = 1.0;
    for (int q = 0; q <= n; ++q) {
        atoms *= count;
        if (atoms > static_cast<double>(cap))
            throw CapExceededError("backward path enumeration exceeds cap of " +
                                   std::to_string(cap) + " atoms");
    }
    std::vector<int> idx(n + 1, 0);
    std::vector<State> path(n + 1);
    double total = 0.0;
    const double terminal_mass = 1.0 / count;
    while (true) {
        double mass = terminal_mass;
        for (int q = n; q >= 1; --q) mass *= matrices[q - 1].at(idx[q], idx[q - 1]);
        for (int q = 0; q <= n; ++q) path[q] = history.at(q).positions[idx[q]];
        total += mass * functional.eval_path(path);
        int q = 0;
        while (q <= n && ++idx[q] == count) idx[q++] = 0;
        if (q > n) break;
    }
    return total;
}

}  // namespace detail

// Post-hoc Q_n^N(F_n) from a stored history. Additive functionals go through
// the same forward recursion (rebuilt from the history); general functionals
// fall back to exhaustive enumeration of the particle path measure, only
// viable at tiny N and n.
template <typename State>
double smoothed_estimate_batch(const CloudHistory<State>& history,
                               const FeynmanKacModel<State>& model,
                               const PathFunctional<State>& functional,
                               std::size_t enumeration_cap = 1'000'000) {
    const int n = history.horizon();
    if (functional.kind == FunctionalKind::General) {
        std::vector<BackwardWeightMatrix> matrices;
        matrices.reserve(n);
        for (int q = 1; q <= n; ++q)
            matrices.push_back(backward_matrix(history.at(q - 1), history.at(q), model));
        const double raw =
            detail::enumerate_backward_measure(history, matrices, functional, enumeration_cap);
        return raw;  // normalized flag is undefined for general functionals
    }
    functional.check_horizon(n);
    SmootherState state = smoother_init(history.at(0), functional);
    for (int q = 1; q <= n; ++q) {
        const auto matrix = backward_matrix(history.at(q - 1), history.at(q), model);
        state = forward_update(state, matrix, history.at(q - 1), history.at(q), functional);
    }
    return smoothed_estimate(state, history.at(n), functional);
}

}  // namespace fkgen
