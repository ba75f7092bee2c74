#include "fkgen/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fkgen/parallel.hpp"
#include "fkgen/rng.hpp"

namespace fkgen {

namespace {

// Per-epoch sampling tables for one finite model.
struct Tables {
    int d = 0;
    std::vector<double> initial_cdf;
    std::vector<std::vector<double>> row_cdfs;  // one block per stored matrix

    explicit Tables(const FiniteStateModel& fsm) : d(fsm.state_count) {
        initial_cdf.resize(d);
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            acc += fsm.initial[j];
            initial_cdf[j] = acc;
        }
        row_cdfs.resize(fsm.transitions.size());
        for (std::size_t k = 0; k < fsm.transitions.size(); ++k) {
            auto& block = row_cdfs[k];
            block.resize(static_cast<std::size_t>(d) * d);
            for (int i = 0; i < d; ++i) {
                double c = 0.0;
                for (int j = 0; j < d; ++j) {
                    c += fsm.transitions[k](i, j);
                    block[static_cast<std::size_t>(i) * d + j] = c;
                }
            }
        }
    }

    std::span<const double> mutation_row(const FiniteStateModel& fsm, int epoch, int state) const {
        const std::size_t block = fsm.homogeneous ? 0 : static_cast<std::size_t>(epoch) - 1;
        return {row_cdfs[block].data() + static_cast<std::size_t>(state) * d,
                static_cast<std::size_t>(d)};
    }
};

double realized_epsilon(const SelectionConfig& config, double max_weight) {
    switch (config.rule) {
        case EpsilonRule::Zero:
            return 0.0;
        case EpsilonRule::ReciprocalSup:
            return 1.0 / max_weight;
        case EpsilonRule::Fixed:
            return std::min(config.fixed_epsilon, 1.0 / max_weight);
    }
    return 0.0;
}

}  // namespace

RunOutput run_replicate(const Scenario& scenario, uint32_t replicate, const RunRequest& request) {
    const FiniteStateModel& fsm = scenario.model;
    const FiniteFunctional& functional = scenario.functional;
    const int d = fsm.state_count;
    const int n_final = scenario.horizon;
    const int count = scenario.particles;
    if (count < 1) throw std::invalid_argument("particle count must be >= 1");
    const bool pairwise = functional.kind == FunctionalKind::PairwiseAdditive;
    if (request.smoothed && functional.kind == FunctionalKind::General)
        throw std::invalid_argument("no forward recursion exists for general path functionals");

    const Tables tables(fsm);
    const RunKey key{scenario.seed, replicate};

    std::vector<int> pos(count), next_pos(count), anc(count);
    std::vector<int> selected_pos(count);
    std::vector<double> weights(count), cumulative(count);
    std::vector<double> values, next_values;       // smoother
    std::vector<double> line_values, next_lines;   // genealogy
    std::vector<int> roots, next_roots;
    std::vector<char> seen;
    std::vector<double> agg_sum(d), agg_count(d), target_value(d);

    RunOutput out;
    double log_norm = 0.0;

    // epoch 0
    for (int i = 0; i < count; ++i) {
        auto rng = key.stream(0, static_cast<uint32_t>(i), StreamPurpose::Init);
        pos[i] = categorical_pick(tables.initial_cdf, rng.next_double());
    }
    if (request.smoothed) {
        values.resize(count);
        next_values.resize(count);
        for (int i = 0; i < count; ++i) values[i] = functional.node_terms[0][pos[i]];
    }
    if (request.genealogical) {
        line_values.resize(count);
        next_lines.resize(count);
        roots.resize(count);
        next_roots.resize(count);
        seen.resize(count);
        for (int i = 0; i < count; ++i) {
            line_values[i] = functional.node_terms[0][pos[i]];
            roots[i] = i;
        }
    }
    auto record_traces = [&](int epoch) {
        if (!request.traces) return;
        if (request.smoothed)
            out.smoothed_trace.push_back(pairwise_sum(values) / count /
                                         functional.normalizer(epoch));
        if (request.genealogical) {
            out.genealogical_trace.push_back(pairwise_sum(line_values) / count /
                                             functional.normalizer(epoch));
            std::fill(seen.begin(), seen.end(), 0);
            int distinct = 0;
            for (int i = 0; i < count; ++i)
                if (!seen[roots[i]]) {
                    seen[roots[i]] = 1;
                    ++distinct;
                }
            out.distinct_roots.push_back(distinct);
        }
        out.log_normalizer_trace.push_back(log_norm);
    };
    record_traces(0);

    for (int n = 0; n < n_final; ++n) {
        const auto& g = fsm.potential(n);
        for (int i = 0; i < count; ++i) weights[i] = g[pos[i]];
        const double total = pairwise_sum(weights);
        if (!(total > 0.0))
            throw ModelContractError("degenerate selection weights (sum G = 0) at epoch " +
                                     std::to_string(n));
        const double max_weight = *std::max_element(weights.begin(), weights.end());
        const double epsilon = realized_epsilon(scenario.selection, max_weight);
        double acc = 0.0;
        for (int i = 0; i < count; ++i) {
            acc += weights[i];
            cumulative[i] = acc;
        }

        for (int i = 0; i < count; ++i) {
            auto rng = key.stream(static_cast<uint32_t>(n), static_cast<uint32_t>(i),
                                  StreamPurpose::Select);
            const double keep_u = rng.next_double();
            int a = i;
            if (!(keep_u < epsilon * weights[i])) a = categorical_pick(cumulative, rng.next_double());
            anc[i] = a;
            selected_pos[i] = pos[a];
        }
        log_norm += std::log(total / count);

        for (int i = 0; i < count; ++i) {
            auto rng = key.stream(static_cast<uint32_t>(n + 1), static_cast<uint32_t>(i),
                                  StreamPurpose::Mutate);
            next_pos[i] = categorical_pick(tables.mutation_row(fsm, n + 1, selected_pos[i]),
                                           rng.next_double());
        }

        if (request.smoothed) {
            // Collapse the backward weights over states: with H_{n+1} = M_{n+1}
            // the row weights depend on i only through its state, so the
            // N^2 recursion reduces to per-state sums.
            std::fill(agg_sum.begin(), agg_sum.end(), 0.0);
            std::fill(agg_count.begin(), agg_count.end(), 0.0);
            for (int i = 0; i < count; ++i) {
                agg_sum[pos[i]] += values[i];
                agg_count[pos[i]] += 1.0;
            }
            const Mat& m = fsm.transition(n + 1);
            for (int t = 0; t < d; ++t) {
                double num = 0.0, den = 0.0;
                for (int s = 0; s < d; ++s) {
                    const double w = g[s] * m(s, t);
                    den += w * agg_count[s];
                    if (pairwise) {
                        num += w * (functional.pair_terms[n](s, t) * agg_count[s] + agg_sum[s]);
                    } else {
                        num += w * agg_sum[s];
                    }
                }
                target_value[t] = num / den;
            }
            if (pairwise) {
                for (int j = 0; j < count; ++j) next_values[j] = target_value[next_pos[j]];
            } else {
                const auto& f_next = functional.node_terms[n + 1];
                for (int j = 0; j < count; ++j)
                    next_values[j] = f_next[next_pos[j]] + target_value[next_pos[j]];
            }
            values.swap(next_values);
        }

        if (request.genealogical) {
            for (int i = 0; i < count; ++i) {
                const double term = pairwise
                                        ? functional.pair_terms[n](selected_pos[i], next_pos[i])
                                        : functional.node_terms[n + 1][next_pos[i]];
                next_lines[i] = line_values[anc[i]] + term;
                next_roots[i] = roots[anc[i]];
            }
            line_values.swap(next_lines);
            roots.swap(next_roots);
        }

        pos.swap(next_pos);
        record_traces(n + 1);
    }

    out.log_normalizer = log_norm;
    out.gamma = std::exp(log_norm);
    if (request.smoothed) {
        out.smoothed = pairwise_sum(values) / count / functional.normalizer(n_final);
        if (request.final_values) out.smoother_values = values;
    }
    if (request.genealogical)
        out.genealogical = pairwise_sum(line_values) / count / functional.normalizer(n_final);
    if (request.filter_terminal) {
        std::vector<double> fv(count);
        for (int i = 0; i < count; ++i) fv[i] = fsm.value_of(pos[i]);
        out.filter_terminal = pairwise_sum(fv) / count;
    }
    return out;
}

std::vector<double> one_step_field_samples(const Scenario& scenario,
                                           std::span<const int> frozen_positions, int target_epoch,
                                           std::span<const double> f_by_state, int replicates,
                                           uint64_t seed, int threads) {
    if (target_epoch < 1) throw std::invalid_argument("target epoch must be >= 1");
    const FiniteStateModel& fsm = scenario.model;
    const int count = static_cast<int>(frozen_positions.size());
    const int n = target_epoch - 1;
    const Tables tables(fsm);
    const auto& g = fsm.potential(n);

    std::vector<double> weights(count), cumulative(count);
    for (int i = 0; i < count; ++i) weights[i] = g[frozen_positions[i]];
    const double total = pairwise_sum(weights);
    if (!(total > 0.0)) throw ModelContractError("degenerate weights in frozen cloud");
    const double max_weight = *std::max_element(weights.begin(), weights.end());
    const double epsilon = realized_epsilon(scenario.selection, max_weight);
    double acc = 0.0;
    for (int i = 0; i < count; ++i) {
        acc += weights[i];
        cumulative[i] = acc;
    }

    std::vector<double> samples(replicates);
    parallel_blocks(static_cast<std::size_t>(replicates), threads,
                    [&](std::size_t begin, std::size_t end) {
                        std::vector<double> fv(count);
                        for (std::size_t r = begin; r < end; ++r) {
                            const RunKey key{seed, static_cast<uint32_t>(r)};
                            for (int i = 0; i < count; ++i) {
                                auto sel = key.stream(static_cast<uint32_t>(n),
                                                      static_cast<uint32_t>(i),
                                                      StreamPurpose::Select);
                                const double keep_u = sel.next_double();
                                int a = i;
                                if (!(keep_u < epsilon * weights[i]))
                                    a = categorical_pick(cumulative, sel.next_double());
                                auto mut = key.stream(static_cast<uint32_t>(target_epoch),
                                                      static_cast<uint32_t>(i),
                                                      StreamPurpose::Mutate);
                                const int y = categorical_pick(
                                    tables.mutation_row(fsm, target_epoch, frozen_positions[a]),
                                    mut.next_double());
                                fv[i] = f_by_state[y];
                            }
                            samples[r] = pairwise_sum(fv) / count;
                        }
                    });
    return samples;
}

}  // namespace fkgen
