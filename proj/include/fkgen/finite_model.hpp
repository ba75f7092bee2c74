#pragma once

#include <limits>
#include <string>
#include <vector>

#include "fkgen/linalg.hpp"
#include "fkgen/model.hpp"

namespace fkgen {

// Explicit finite-state model: probability vector eta0, row-stochastic
// transition matrices M_n and potential vectors G_n. The reference measures
// are counting measures, so H_n(x,y) = M_n[x][y]. Either one (M, G) pair is
// reused for every epoch (time-homogeneous) or per-epoch tables are given.
struct FiniteStateModel {
    int state_count = 0;
    std::vector<double> initial;                  // eta0
    std::vector<Mat> transitions;                 // M_n, n >= 1 (index n-1 when inhomogeneous)
    std::vector<std::vector<double>> potentials;  // G_n, n >= 0 (index n when inhomogeneous)
    bool homogeneous = true;
    std::vector<double> state_values;             // value map for functionals; defaults to 0..d-1
    std::string name = "finite";

    const Mat& transition(int n) const;            // M_n, n >= 1
    const std::vector<double>& potential(int n) const;  // G_n, n >= 0
    int max_horizon() const {
        if (homogeneous) return std::numeric_limits<int>::max();
        return static_cast<int>(transitions.size());
    }

    // Exact contract checks: eta0 on the simplex, rows sum to 1 within tol,
    // all M entries > 0 (condition (H)), G entries in (0,1].
    void validate(double tol = 1e-12) const;

    double value_of(int state) const { return state_values[state]; }

    // Plain-text fixture format; see fixtures/ for examples.
    static FiniteStateModel load(const std::string& path);
    static FiniteStateModel parse(const std::string& text, const std::string& name);

    // Toy scenario with independent moves: two states valued -1/+1,
    // uniform eta0, M(x, .) = eta0 and G = 1.
    static FiniteStateModel iid_toy();
};

// Wrap a finite model as a generic particle model over int states.
FeynmanKacModel<int> make_particle_model(const FiniteStateModel& fsm, int horizon);

}  // namespace fkgen
