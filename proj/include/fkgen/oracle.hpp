#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fkgen/finite_model.hpp"
#include "fkgen/functional.hpp"
#include "fkgen/linalg.hpp"

namespace fkgen::oracle {

// ---------------------------------------------------------------------------
// Flows

struct FlowTable {
    std::vector<std::vector<double>> gamma;  // unnormalized gamma_n, n = 0..horizon
    std::vector<std::vector<double>> eta;    // gamma_n / gamma_n(1)
    std::vector<double> normalizer;          // Z_n = gamma_n(1)
    double cross_check_error = 0.0;          // recursion vs multiplicative formula
};

// gamma_n by repeated v <- v Q_n with Q_n = diag(G_{n-1}) M_n, cross-checked
// against gamma_n(1) = prod_{p<n} eta_p(G_p).
FlowTable exact_flow(const FiniteStateModel& fsm, int horizon);

// Boltzmann-Gibbs transform followed by mutation: Phi_n(eta) as a vector.
std::vector<double> phi_step(const FiniteStateModel& fsm, int n, std::span<const double> eta_prev);

// ---------------------------------------------------------------------------
// Backward kernels

// M_{n, eta}: d x d row-stochastic matrix from E_n into E_{n-1};
// entry [x][y] = G_{n-1}(y) M_n[y][x] eta(y) / normalizer(x).
Mat exact_backward_kernel(const FiniteStateModel& fsm, int n, std::span<const double> eta_prev);

// ---------------------------------------------------------------------------
// Path enumeration

struct PathTable {
    int d = 0;
    int horizon = 0;
    std::vector<double> q_mass;      // normalized atom masses (Q_n)
    std::vector<double> gamma_mass;  // unnormalized (Gamma_n)
    double normalizer = 0.0;         // Z_n

    std::size_t atom_count() const { return q_mass.size(); }
    // path code digit p (base d, little-endian) = state at epoch p
    void decode(std::size_t code, std::span<int> out) const {
        for (int p = 0; p <= horizon; ++p) {
            out[p] = static_cast<int>(code % d);
            code /= d;
        }
    }
};

PathTable enumerate_path_measure(const FiniteStateModel& fsm, int horizon,
                                 std::size_t cap = 1'000'000);

// ---------------------------------------------------------------------------
// Semigroups

// All Q_{p,q} products, their normalizations S_{p,q}, Dobrushin coefficients,
// relative-oscillation constants b_{p,n} and normalized potentials G_{p,n}.
class SemigroupTable {
public:
    SemigroupTable(const FiniteStateModel& fsm, int horizon);

    int horizon() const { return horizon_; }
    const Mat& Q(int p, int q) const;                 // Q_{p,q}, Q_{p,p} = Id
    std::vector<double> Q_one(int p, int q) const;    // Q_{p,q}(1)
    Mat S(int p, int q) const;                        // row-normalized Q_{p,q}
    double beta_S(int p, int q) const;                // Dobrushin coefficient of S_{p,q}
    double b(int p, int n) const;                     // sup_{x,y} Q1(x)/Q1(y), >= 1
    // G_{p,n} = Q_{p,n}(1) / eta_p(Q_{p,n}(1)); eta_p-mean is 1 by construction.
    std::vector<double> G_norm(int p, int n, std::span<const double> eta_p) const;

private:
    std::size_t index(int p, int q) const;
    int horizon_;
    std::vector<Mat> products_;
};

SemigroupTable semigroup_table(const FiniteStateModel& fsm, int horizon);

// ---------------------------------------------------------------------------
// Regularity conditions

struct MmResult {
    bool holds = false;
    int m = 1;
    double delta = 0.0;  // smallest valid: max G / min G
    double rho = 0.0;    // smallest valid: max over (x,x',y) of M^m[x][y]/M^m[x'][y]
};

// Condition (M)_m for time-homogeneous models; fails if any M^m entry is 0.
MmResult check_Mm_condition(const FiniteStateModel& fsm, int m);

// alpha(h) = inf over (x,y,y') of H(x,y)/H(x,y'), time-homogeneous H.
double backward_mixing_alpha(const FiniteStateModel& fsm);

// ---------------------------------------------------------------------------
// h-process

struct HProcessResult {
    double eigenvalue = 0.0;             // top eigenvalue of Q = diag(G) M
    std::vector<double> h;               // right eigenvector, max-normalized
    std::vector<double> mu;              // stationary law of M
    std::vector<double> mu_h;            // h(x) M(h)(x) mu(x), normalized
    Mat m_h;                             // M_h(x,dy) = M[x][y] h(y) / M(h)(x)
    std::vector<double> m_h_stationary;  // stationary law of M_h
    double stationary_gap = 0.0;         // TV(mu_h, m_h_stationary)
    int iterations = 0;
};

HProcessResult h_process(const FiniteStateModel& fsm, double tolerance = 1e-13,
                         int max_iters = 200000);

// ---------------------------------------------------------------------------
// Smoothing and fluctuation oracles

// Exact backward values: B_p(x) = E[additive terms up to p | backward chain
// from x at epoch p], the exact analogue of F_p^N. Returns one vector per
// epoch 0..horizon. (Raw values; the normalized flag is ignored here.)
std::vector<std::vector<double>> exact_backward_values(const FiniteStateModel& fsm, int horizon,
                                                       const FiniteFunctional& functional);

// Exact Q_n(F_n) through the backward value recursion; honors `normalized`.
double exact_smoothed_additive(const FiniteStateModel& fsm, int horizon,
                               const FiniteFunctional& functional);

// D_{p,n}(F) as a function on E_p, for additive functionals (terminal or
// pairwise). D_{p,n}(1) = Q_{p,n}(1).
std::vector<double> exact_D_pn(const FiniteStateModel& fsm, int p, int horizon,
                               const FiniteFunctional& functional);

enum class EstimatorKind {
    Backward,      // Q_n^N from the backward particle measure
    Genealogical,  // ancestral-line occupation measure
};

// Asymptotic variance of W_n(F) = lim sqrt(N) (estimate - Q_n(F)) for the
// simple genetic model (epsilon = 0). Honors `normalized`.
double clt_variance(const FiniteStateModel& fsm, int horizon, const FiniteFunctional& functional,
                    EstimatorKind kind = EstimatorKind::Backward);

// Exact one-step sampling variance E(V_n(f)^2) for a transition from
// eta_prev: the conditional variance of f under the selection-mutation
// transition, including the keep branch when epsilon > 0.
double local_sampling_variance(const FiniteStateModel& fsm, int n,
                               std::span<const double> eta_prev, std::span<const double> f,
                               double epsilon = 0.0);

// ---------------------------------------------------------------------------
// Non-asymptotic bounds

struct BoundReport {
    int horizon = 0;
    int particles = 0;
    int r = 2;
    int m = 1;                     // smallest m with (M)_m holding (if any)
    bool mm_holds = false;
    double a_r = 0.0;              // Khintchine constant
    double delta = 0.0;
    double rho = 0.0;
    double alpha_h = 0.0;          // backward mixing ratio
    std::vector<double> b_pn;      // exact sup-ratios of Q_{p,n}(1)
    double contraction_sum = 0.0;  // sum_p b_{p,n}^2 c_{p,n} at osc(f_q) <= 1
    double lr_bound = 0.0;         // a_r * contraction_sum, bounds sqrt(N) L_r error
    double normalized_bound = 0.0; // lr_bound / (n+1), for normalized functionals
    bool mm_bound_applicable = false;  // (M)_m holds and N > (n+1) rho delta^m
    double mm_l2_bound = 0.0;      // sqrt(N) L2 bound from the (M)_m estimates, ||F|| <= 1
    double concentration_b = 0.0;  // b in the Gaussian tail for normalized functionals
};

BoundReport nonasymptotic_bounds(const FiniteStateModel& fsm, int horizon, int particles, int r);

// ---------------------------------------------------------------------------
// Exact identity suite (duality, backward decompositions, semigroup)

struct IdentityReport {
    double flow_error = 0.0;            // recursion vs multiplicative formula
    double duality_error = 0.0;         // Psi_G(eta)(f M g) vs Phi(eta)(g M_eta f)
    double backward_decomposition_error = 0.0;  // Q_n = eta_n x backward chain, atomwise
    double arbitrary_start_error = 0.0;  // eta Q_{p,n} x M_{n,p,eta} vs eta x Q_{p,n}
    double semigroup_error = 0.0;       // Gamma_n(F) = gamma_p D_{p,n}(F), all p
};

// Worst absolute (semigroup: relative) deviations across randomized trials;
// deterministic in the seed. The functional must be additive.
IdentityReport identity_suite(const FiniteStateModel& fsm, int horizon,
                              const FiniteFunctional& functional, uint64_t seed);

}  // namespace fkgen::oracle
