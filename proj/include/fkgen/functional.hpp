#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fkgen/errors.hpp"
#include "fkgen/linalg.hpp"

namespace fkgen {

enum class FunctionalKind {
    TerminalAdditive,   // F_n = sum_p f_p(x_p)
    PairwiseAdditive,   // F_n = f_0(x_0) + sum_{p>=1} f_p(x_{p-1}, x_p)
    General,            // arbitrary function of the whole path (oracle/test use)
};

inline std::string to_string(FunctionalKind k) {
    switch (k) {
        case FunctionalKind::TerminalAdditive: return "terminal-additive";
        case FunctionalKind::PairwiseAdditive: return "pairwise-additive";
        case FunctionalKind::General: return "general";
    }
    return "?";
}

// Path functional over an opaque state type. Terms are per-epoch; a
// functional built for horizon n carries exactly n+1 of them.
template <typename State>
struct PathFunctional {
    FunctionalKind kind = FunctionalKind::TerminalAdditive;
    // TerminalAdditive: node_terms[p] = f_p, p = 0..n.
    // PairwiseAdditive: node_terms has the single epoch-0 entry f_0.
    std::vector<std::function<double(const State&)>> node_terms;
    // PairwiseAdditive: pair_terms[p-1] = f_p(x_{p-1}, x_p), p = 1..n.
    std::vector<std::function<double(const State&, const State&)>> pair_terms;
    // General: evaluated on the whole path.
    std::function<double(std::span<const State>)> whole_path;
    // When set, estimators report F̄_n = F_n / (n+1).
    bool normalized = false;

    int horizon() const {
        switch (kind) {
            case FunctionalKind::TerminalAdditive:
                return static_cast<int>(node_terms.size()) - 1;
            case FunctionalKind::PairwiseAdditive:
                return static_cast<int>(pair_terms.size());
            case FunctionalKind::General:
                return -1;  // not encoded in the terms
        }
        return -1;
    }

    void check_horizon(int n) const {
        if (kind == FunctionalKind::General) return;
        if (horizon() != n)
            throw ConfigError("functional has terms for horizon " + std::to_string(horizon()) +
                              " but the run uses horizon " + std::to_string(n));
    }

    // Raw F evaluated on a full path; normalization is applied by estimators.
    double eval_path(std::span<const State> path) const {
        switch (kind) {
            case FunctionalKind::TerminalAdditive: {
                double s = 0.0;
                for (std::size_t p = 0; p < path.size(); ++p) s += node_terms[p](path[p]);
                return s;
            }
            case FunctionalKind::PairwiseAdditive: {
                double s = node_terms[0](path[0]);
                for (std::size_t p = 1; p < path.size(); ++p) s += pair_terms[p - 1](path[p - 1], path[p]);
                return s;
            }
            case FunctionalKind::General:
                return whole_path(path);
        }
        return 0.0;
    }

    double normalizer(int n) const { return normalized ? static_cast<double>(n + 1) : 1.0; }
};

// Finite-state functional: per-epoch term tables indexed by state. This is
// what the oracle consumes and what scenario configs build.
struct FiniteFunctional {
    FunctionalKind kind = FunctionalKind::TerminalAdditive;
    // TerminalAdditive: node_terms[p][x] = f_p(x), p = 0..n.
    // PairwiseAdditive: node_terms[0][x] = f_0(x) only.
    std::vector<std::vector<double>> node_terms;
    // PairwiseAdditive: pair_terms[p-1](u, v) = f_p(x_{p-1}=u, x_p=v), p = 1..n.
    std::vector<Mat> pair_terms;
    std::function<double(std::span<const int>)> whole_path;
    bool normalized = false;
    std::string label;

    int horizon() const {
        switch (kind) {
            case FunctionalKind::TerminalAdditive:
                return static_cast<int>(node_terms.size()) - 1;
            case FunctionalKind::PairwiseAdditive:
                return static_cast<int>(pair_terms.size());
            case FunctionalKind::General:
                return -1;
        }
        return -1;
    }

    double eval_path(std::span<const int> path) const {
        switch (kind) {
            case FunctionalKind::TerminalAdditive: {
                double s = 0.0;
                for (std::size_t p = 0; p < path.size(); ++p) s += node_terms[p][path[p]];
                return s;
            }
            case FunctionalKind::PairwiseAdditive: {
                double s = node_terms[0][path[0]];
                for (std::size_t p = 1; p < path.size(); ++p)
                    s += pair_terms[p - 1](path[p - 1], path[p]);
                return s;
            }
            case FunctionalKind::General:
                return whole_path(path);
        }
        return 0.0;
    }

    double normalizer(int n) const { return normalized ? static_cast<double>(n + 1) : 1.0; }
};

// Largest oscillation max f_p - min f_p over the per-epoch terms, exact on
// the finite tables. Bound reporters assume unit oscillation; callers guard
// with this before comparing empirical errors against assembled bounds.
inline double max_term_oscillation(const FiniteFunctional& f) {
    if (f.kind == FunctionalKind::General)
        throw std::invalid_argument("oscillation is only tabulated for additive functionals");
    double worst = 0.0;
    for (const auto& term : f.node_terms) {
        double lo = term[0], hi = term[0];
        for (const double v : term) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        worst = std::max(worst, hi - lo);
    }
    for (const auto& pair : f.pair_terms) {
        double lo = pair(0, 0), hi = pair(0, 0);
        for (int u = 0; u < pair.rows(); ++u)
            for (int v = 0; v < pair.cols(); ++v) {
                lo = std::min(lo, pair(u, v));
                hi = std::max(hi, pair(u, v));
            }
        worst = std::max(worst, hi - lo);
    }
    return worst;
}

// View a finite-state functional as a PathFunctional over int states.
inline PathFunctional<int> to_path_functional(const FiniteFunctional& f) {
    PathFunctional<int> out;
    out.kind = f.kind;
    out.normalized = f.normalized;
    for (const auto& term : f.node_terms) {
        out.node_terms.emplace_back([term](const int& x) { return term[x]; });
    }
    for (const auto& pm : f.pair_terms) {
        out.pair_terms.emplace_back([pm](const int& u, const int& v) { return pm(u, v); });
    }
    if (f.kind == FunctionalKind::General) {
        out.whole_path = [g = f.whole_path](std::span<const int> path) { return g(path); };
    }
    return out;
}

}  // namespace fkgen
