#include "fkgen/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "fkgen/stats.hpp"

namespace fkgen::oracle {

namespace {

// Q_n = diag(G_{n-1}) M_n
Mat weighted_step(const FiniteStateModel& fsm, int n) {
    const Mat& m = fsm.transition(n);
    const auto& g = fsm.potential(n - 1);
    Mat q(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) q(i, j) = g[i] * m(i, j);
    return q;
}

void require_homogeneous(const FiniteStateModel& fsm, const char* what) {
    if (!fsm.homogeneous)
        throw std::invalid_argument(std::string(what) + " requires a time-homogeneous model");
}

void check_additive(const FiniteFunctional& f, const char* what) {
    if (f.kind == FunctionalKind::General)
        throw std::invalid_argument(std::string(what) +
                                    " is defined for additive functionals only");
}

}  // namespace

FlowTable exact_flow(const FiniteStateModel& fsm, int horizon) {
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    if (horizon > fsm.max_horizon())
        throw std::out_of_range("horizon exceeds the model's per-epoch tables");
    const int d = fsm.state_count;
    FlowTable t;
    t.gamma.reserve(horizon + 1);
    t.eta.reserve(horizon + 1);
    t.normalizer.reserve(horizon + 1);

    std::vector<double> gamma = fsm.initial;
    double log_product = 0.0;  // log prod_{p<n} eta_p(G_p)
    for (int n = 0; n <= horizon; ++n) {
        if (n > 0) {
            std::vector<double> next(d, 0.0);
            const Mat& m = fsm.transition(n);
            const auto& g = fsm.potential(n - 1);
            for (int x = 0; x < d; ++x) {
                const double w = gamma[x] * g[x];
                for (int y = 0; y < d; ++y) next[y] += w * m(x, y);
            }
            gamma = std::move(next);
        }
        const double z = vec_sum(gamma);
        std::vector<double> eta(d);
        for (int x = 0; x < d; ++x) eta[x] = gamma[x] / z;
        // multiplicative formula cross-check: Z_n = prod_{p<n} eta_p(G_p)
        const double z_mult = std::exp(log_product);
        t.cross_check_error = std::max(t.cross_check_error, std::abs(z - z_mult));
        log_product += std::log(dot(eta, fsm.potential(n)));
        t.gamma.push_back(gamma);
        t.eta.push_back(std::move(eta));
        t.normalizer.push_back(z);
    }
    return t;
}

std::vector<double> phi_step(const FiniteStateModel& fsm, int n,
                             std::span<const double> eta_prev) {
    if (n < 1) throw std::invalid_argument("phi_step needs epoch n >= 1");
    const int d = fsm.state_count;
    const Mat& m = fsm.transition(n);
    const auto& g = fsm.potential(n - 1);
    std::vector<double> out(d, 0.0);
    double mass = 0.0;
    for (int x = 0; x < d; ++x) {
        const double w = eta_prev[x] * g[x];
        mass += w;
        for (int y = 0; y < d; ++y) out[y] += w * m(x, y);
    }
    if (!(mass > 0.0)) throw ModelContractError("Boltzmann-Gibbs mass is zero in phi_step");
    for (double& v : out) v /= mass;
    return out;
}

Mat exact_backward_kernel(const FiniteStateModel& fsm, int n, std::span<const double> eta_prev) {
    if (n < 1) throw std::invalid_argument("backward kernel needs epoch n >= 1");
    const int d = fsm.state_count;
    const Mat& m = fsm.transition(n);
    const auto& g = fsm.potential(n - 1);
    Mat k(d, d);
    for (int x = 0; x < d; ++x) {
        double norm = 0.0;
        for (int y = 0; y < d; ++y) {
            k(x, y) = g[y] * m(y, x) * eta_prev[y];
            norm += k(x, y);
        }
        if (!(norm > 0.0))
            throw ModelContractError("backward kernel column normalizer is zero at epoch " +
                                     std::to_string(n) + " (condition (H) violated)");
        for (int y = 0; y < d; ++y) k(x, y) /= norm;
    }
    return k;
}

PathTable enumerate_path_measure(const FiniteStateModel& fsm, int horizon, std::size_t cap) {
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    const int d = fsm.state_count;
    double atoms_d = 1.0;
    for (int p = 0; p <= horizon; ++p) {
        atoms_d *= d;
        if (atoms_d > static_cast<double>(cap))
            throw CapExceededError("path enumeration needs " + std::to_string(atoms_d) +
                                   " atoms, cap is " + std::to_string(cap));
    }
    const std::size_t atoms = static_cast<std::size_t>(atoms_d);

    PathTable t;
    t.d = d;
    t.horizon = horizon;
    t.gamma_mass.resize(atoms);
    t.q_mass.resize(atoms);

    std::vector<int> path(horizon + 1);
    double total = 0.0;
    for (std::size_t code = 0; code < atoms; ++code) {
        t.decode(code, path);
        double mass = fsm.initial[path[0]];
        for (int p = 1; p <= horizon; ++p) mass *= fsm.transition(p)(path[p - 1], path[p]);
        for (int p = 0; p < horizon; ++p) mass *= fsm.potential(p)[path[p]];
        t.gamma_mass[code] = mass;
        total += mass;
    }
    if (!(total > 0.0)) throw ModelContractError("path measure has zero total mass");
    t.normalizer = total;
    for (std::size_t code = 0; code < atoms; ++code) t.q_mass[code] = t.gamma_mass[code] / total;
    return t;
}

// ---------------------------------------------------------------------------
// SemigroupTable

SemigroupTable::SemigroupTable(const FiniteStateModel& fsm, int horizon) : horizon_(horizon) {
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    const int d = fsm.state_count;
    std::vector<Mat> steps;  // Q_q, q = 1..horizon
    steps.reserve(horizon);
    for (int q = 1; q <= horizon; ++q) steps.push_back(weighted_step(fsm, q));

    products_.resize(static_cast<std::size_t>(horizon + 1) * (horizon + 2) / 2);
    for (int p = 0; p <= horizon; ++p) {
        products_[index(p, p)] = Mat::identity(d);
        for (int q = p + 1; q <= horizon; ++q)
            products_[index(p, q)] = products_[index(p, q - 1)] * steps[q - 1];
    }
}

std::size_t SemigroupTable::index(int p, int q) const {
    // row p of an upper-triangular table laid out row by row
    const std::size_t h = horizon_;
    const std::size_t sp = static_cast<std::size_t>(p);
    return sp * (h + 1) - sp * (sp - 1) / 2 + (q - p);
}

const Mat& SemigroupTable::Q(int p, int q) const {
    if (p < 0 || q < p || q > horizon_) throw std::out_of_range("semigroup pair out of range");
    return products_[index(p, q)];
}

std::vector<double> SemigroupTable::Q_one(int p, int q) const { return Q(p, q).row_sums(); }

Mat SemigroupTable::S(int p, int q) const {
    const Mat& m = Q(p, q);
    Mat s(m.rows(), m.cols());
    const auto sums = m.row_sums();
    for (int i = 0; i < m.rows(); ++i) {
        if (!(sums[i] > 0.0)) throw ModelContractError("S_{p,q} has a zero row normalizer");
        for (int j = 0; j < m.cols(); ++j) s(i, j) = m(i, j) / sums[i];
    }
    return s;
}

double SemigroupTable::beta_S(int p, int q) const { return dobrushin_beta(S(p, q)); }

double SemigroupTable::b(int p, int n) const {
    const auto ones = Q_one(p, n);
    const auto [mn, mx] = std::minmax_element(ones.begin(), ones.end());
    if (!(*mn > 0.0)) throw ModelContractError("Q_{p,n}(1) has a non-positive entry");
    return *mx / *mn;
}

std::vector<double> SemigroupTable::G_norm(int p, int n, std::span<const double> eta_p) const {
    auto ones = Q_one(p, n);
    const double mean = dot(eta_p, ones);
    for (double& v : ones) v /= mean;
    return ones;
}

SemigroupTable semigroup_table(const FiniteStateModel& fsm, int horizon) {
    return SemigroupTable(fsm, horizon);
}

// ---------------------------------------------------------------------------
// Regularity conditions

MmResult check_Mm_condition(const FiniteStateModel& fsm, int m) {
    require_homogeneous(fsm, "check_Mm_condition");
    if (m < 1) throw std::invalid_argument("m must be >= 1");
    MmResult res;
    res.m = m;
    const auto& g = fsm.potential(0);
    const auto [gmn, gmx] = std::minmax_element(g.begin(), g.end());
    res.delta = *gmx / *gmn;

    Mat power = fsm.transition(1);
    for (int k = 1; k < m; ++k) power = power * fsm.transition(1);
    double rho = 1.0;
    for (int y = 0; y < power.cols(); ++y) {
        double col_min = std::numeric_limits<double>::infinity();
        double col_max = 0.0;
        for (int x = 0; x < power.rows(); ++x) {
            col_min = std::min(col_min, power(x, y));
            col_max = std::max(col_max, power(x, y));
        }
        if (!(col_min > 0.0)) {
            res.holds = false;
            res.rho = std::numeric_limits<double>::infinity();
            return res;
        }
        rho = std::max(rho, col_max / col_min);
    }
    res.rho = rho;
    res.holds = true;
    return res;
}

double backward_mixing_alpha(const FiniteStateModel& fsm) {
    require_homogeneous(fsm, "backward_mixing_alpha");
    const Mat& m = fsm.transition(1);
    double alpha = std::numeric_limits<double>::infinity();
    for (int x = 0; x < m.rows(); ++x) {
        double row_min = std::numeric_limits<double>::infinity();
        double row_max = 0.0;
        for (int y = 0; y < m.cols(); ++y) {
            row_min = std::min(row_min, m(x, y));
            row_max = std::max(row_max, m(x, y));
        }
        if (!(row_min > 0.0)) return 0.0;
        alpha = std::min(alpha, row_min / row_max);
    }
    return alpha;
}

// ---------------------------------------------------------------------------
// h-process

namespace {

bool is_primitive(const Mat& q) {
    const int d = q.rows();
    if (d == 1) return q(0, 0) > 0.0;
    std::vector<char> reach(static_cast<std::size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) reach[i * d + j] = q(i, j) > 0.0;
    auto all_positive = [&] {
        for (const char c : reach)
            if (!c) return false;
        return true;
    };
    // Wielandt's bound: a primitive matrix has a strictly positive power of
    // exponent at most (d-1)^2 + 1.
    const int limit = (d - 1) * (d - 1) + 1;
    std::vector<char> next(reach.size());
    for (int step = 1; step <= limit; ++step) {
        if (all_positive()) return true;
        std::fill(next.begin(), next.end(), 0);
        for (int i = 0; i < d; ++i)
            for (int k = 0; k < d; ++k) {
                if (!reach[i * d + k]) continue;
                for (int j = 0; j < d; ++j)
                    if (q(k, j) > 0.0) next[i * d + j] = 1;
            }
        reach.swap(next);
    }
    return all_positive();
}

std::vector<double> stationary_of(const Mat& m, double tol, int max_iters, int* iters_out) {
    const int d = m.rows();
    std::vector<double> mu(d, 1.0 / d);
    for (int it = 0; it < max_iters; ++it) {
        auto next = m.apply_left(mu);
        normalize_in_place(next);
        const double gap = total_variation(mu, next);
        mu = std::move(next);
        if (gap <= tol) {
            if (iters_out) *iters_out += it + 1;
            return mu;
        }
    }
    throw FkError("stationary-distribution power iteration did not converge");
}

}  // namespace

HProcessResult h_process(const FiniteStateModel& fsm, double tolerance, int max_iters) {
    require_homogeneous(fsm, "h_process");
    const int d = fsm.state_count;
    const Mat q = weighted_step(fsm, 1);
    if (!is_primitive(q))
        throw ModelContractError("h_process requires a primitive weighted kernel Q");

    HProcessResult res;
    std::vector<double> v(d, 1.0 / d);
    double eigenvalue = 0.0;
    int it = 0;
    for (; it < max_iters; ++it) {
        auto w = q.apply(v);
        eigenvalue = vec_sum(w);  // ||w||_1 with ||v||_1 = 1 and w >= 0
        for (double& x : w) x /= eigenvalue;
        double residual = 0.0;
        for (int i = 0; i < d; ++i) residual = std::max(residual, std::abs(w[i] - v[i]));
        v = std::move(w);
        if (residual <= tolerance) break;
    }
    if (it == max_iters) throw FkError("h_process power iteration did not converge");
    res.iterations = it + 1;
    res.eigenvalue = eigenvalue;

    const double vmax = *std::max_element(v.begin(), v.end());
    res.h.resize(d);
    for (int i = 0; i < d; ++i) res.h[i] = v[i] / vmax;

    const Mat& m = fsm.transition(1);
    res.mu = stationary_of(m, tolerance, max_iters, &res.iterations);

    const auto mh_of = m.apply(res.h);  // M(h)
    res.mu_h.resize(d);
    for (int i = 0; i < d; ++i) res.mu_h[i] = res.h[i] * mh_of[i] * res.mu[i];
    normalize_in_place(res.mu_h);

    res.m_h = Mat(d, d);
    for (int x = 0; x < d; ++x)
        for (int y = 0; y < d; ++y) res.m_h(x, y) = m(x, y) * res.h[y] / mh_of[x];
    res.m_h_stationary = stationary_of(res.m_h, tolerance, max_iters, &res.iterations);
    res.stationary_gap = total_variation(res.mu_h, res.m_h_stationary);
    return res;
}

// ---------------------------------------------------------------------------
// Smoothing oracles

std::vector<std::vector<double>> exact_backward_values(const FiniteStateModel& fsm, int horizon,
                                                       const FiniteFunctional& functional) {
    check_additive(functional, "exact_backward_values");
    if (functional.horizon() != horizon)
        throw std::invalid_argument("functional horizon does not match the requested horizon");
    const int d = fsm.state_count;
    const auto flow = exact_flow(fsm, horizon);

    std::vector<std::vector<double>> values;
    values.reserve(horizon + 1);
    values.push_back(functional.node_terms[0]);
    for (int n = 1; n <= horizon; ++n) {
        const Mat k = exact_backward_kernel(fsm, n, flow.eta[n - 1]);
        std::vector<double> next(d, 0.0);
        for (int x = 0; x < d; ++x) {
            double acc = 0.0;
            if (functional.kind == FunctionalKind::TerminalAdditive) {
                for (int y = 0; y < d; ++y) acc += k(x, y) * values[n - 1][y];
                acc += functional.node_terms[n][x];
            } else {
                for (int y = 0; y < d; ++y)
                    acc += k(x, y) * (functional.pair_terms[n - 1](y, x) + values[n - 1][y]);
            }
            next[x] = acc;
        }
        values.push_back(std::move(next));
    }
    return values;
}

double exact_smoothed_additive(const FiniteStateModel& fsm, int horizon,
                               const FiniteFunctional& functional) {
    if (functional.kind == FunctionalKind::General) {
        const auto table = enumerate_path_measure(fsm, horizon);
        std::vector<int> path(horizon + 1);
        double acc = 0.0;
        for (std::size_t code = 0; code < table.atom_count(); ++code) {
            table.decode(code, path);
            acc += table.q_mass[code] * functional.eval_path(path);
        }
        return acc;
    }
    const auto values = exact_backward_values(fsm, horizon, functional);
    const auto flow = exact_flow(fsm, horizon);
    return dot(flow.eta[horizon], values[horizon]) / functional.normalizer(horizon);
}

std::vector<double> exact_D_pn(const FiniteStateModel& fsm, int p, int horizon,
                               const FiniteFunctional& functional) {
    check_additive(functional, "exact_D_pn");
    if (p < 0 || p > horizon) throw std::out_of_range("p must lie in [0, horizon]");
    const int d = fsm.state_count;
    const SemigroupTable sg(fsm, horizon);
    const auto backward = exact_backward_values(fsm, horizon, functional);

    // Backward contribution: Q_{p,n}(1)(x) * B_p(x).
    std::vector<double> out = sg.Q_one(p, horizon);
    for (int x = 0; x < d; ++x) out[x] *= backward[p][x];

    if (functional.kind == FunctionalKind::TerminalAdditive) {
        for (int q = p + 1; q <= horizon; ++q) {
            auto tail = sg.Q_one(q, horizon);
            for (int v = 0; v < d; ++v) tail[v] *= functional.node_terms[q][v];
            const auto term = sg.Q(p, q).apply(tail);
            for (int x = 0; x < d; ++x) out[x] += term[x];
        }
    } else {
        for (int q = p + 1; q <= horizon; ++q) {
            const Mat step = weighted_step(fsm, q);
            const auto tail = sg.Q_one(q, horizon);
            std::vector<double> u(d, 0.0);  // u[w] = sum_v Q_q(w,v) f_q(w,v) tail(v)
            for (int w = 0; w < d; ++w) {
                double acc = 0.0;
                for (int v = 0; v < d; ++v)
                    acc += step(w, v) * functional.pair_terms[q - 1](w, v) * tail[v];
                u[w] = acc;
            }
            const auto term = sg.Q(p, q - 1).apply(u);
            for (int x = 0; x < d; ++x) out[x] += term[x];
        }
    }
    return out;
}

double clt_variance(const FiniteStateModel& fsm, int horizon, const FiniteFunctional& functional,
                    EstimatorKind kind) {
    check_additive(functional, "clt_variance");
    const int d = fsm.state_count;
    const auto flow = exact_flow(fsm, horizon);
    const SemigroupTable sg(fsm, horizon);
    const auto backward = exact_backward_values(fsm, horizon, functional);
    const double smoothed = dot(flow.eta[horizon], backward[horizon]);

    // Second moments of the additive prefix along the exact backward chain,
    // used by the genealogical (path-space) variance.
    std::vector<std::vector<double>> m2;
    if (kind == EstimatorKind::Genealogical) {
        m2.reserve(horizon + 1);
        std::vector<double> first(d);
        for (int x = 0; x < d; ++x)
            first[x] = functional.node_terms[0][x] * functional.node_terms[0][x];
        m2.push_back(std::move(first));
        for (int n = 1; n <= horizon; ++n) {
            const Mat k = exact_backward_kernel(fsm, n, flow.eta[n - 1]);
            std::vector<double> next(d, 0.0);
            for (int x = 0; x < d; ++x) {
                double acc = 0.0;
                for (int y = 0; y < d; ++y) {
                    const double t = functional.kind == FunctionalKind::TerminalAdditive
                                         ? functional.node_terms[n][x]
                                         : functional.pair_terms[n - 1](y, x);
                    acc += k(x, y) * (t * t + 2.0 * t * backward[n - 1][y] + m2[n - 1][y]);
                }
                next[x] = acc;
            }
            m2.push_back(std::move(next));
        }
    }

    double variance = 0.0;
    for (int p = 0; p <= horizon; ++p) {
        const auto g_norm = sg.G_norm(p, horizon, flow.eta[p]);
        const auto d_pn = exact_D_pn(fsm, p, horizon, functional);
        const auto q_one = sg.Q_one(p, horizon);

        if (kind == EstimatorKind::Backward) {
            // phi_p = G_{p,n} (P_{p,n}(F) - Q_n(F)); term = Var_{eta_p}(phi_p)
            double mean = 0.0, second = 0.0;
            for (int x = 0; x < d; ++x) {
                const double phi = g_norm[x] * (d_pn[x] / q_one[x] - smoothed);
                mean += flow.eta[p][x] * phi;
                second += flow.eta[p][x] * phi * phi;
            }
            variance += second - mean * mean;
        } else {
            // Path-space field: P-bar_p(path) = A_p(path) + psi_p(x_p) with
            // A_p the additive prefix; conditional moments of A_p given x_p
            // come from the backward-chain recursion.
            double mean = 0.0, second = 0.0;
            for (int x = 0; x < d; ++x) {
                const double psi_c = d_pn[x] / q_one[x] - backward[p][x] - smoothed;
                const double e1 = backward[p][x] + psi_c;
                const double e2 =
                    m2[p][x] + 2.0 * psi_c * backward[p][x] + psi_c * psi_c;
                mean += flow.eta[p][x] * g_norm[x] * e1;
                second += flow.eta[p][x] * g_norm[x] * g_norm[x] * e2;
            }
            variance += second - mean * mean;
        }
    }
    const double scale = functional.normalizer(horizon);
    return variance / (scale * scale);
}

double local_sampling_variance(const FiniteStateModel& fsm, int n,
                               std::span<const double> eta_prev, std::span<const double> f,
                               double epsilon) {
    if (n < 1) throw std::invalid_argument("local_sampling_variance needs epoch n >= 1");
    const int d = fsm.state_count;
    const Mat& m = fsm.transition(n);
    const auto& g = fsm.potential(n - 1);

    // Resampling branch: Psi_G(eta) M as a vector.
    std::vector<double> pooled(d, 0.0);
    double mass = 0.0;
    for (int x = 0; x < d; ++x) {
        const double w = eta_prev[x] * g[x];
        mass += w;
        for (int y = 0; y < d; ++y) pooled[y] += w * m(x, y);
    }
    if (!(mass > 0.0)) throw ModelContractError("zero selection mass in local_sampling_variance");
    for (double& v : pooled) v /= mass;

    double total = 0.0;
    std::vector<double> kx(d);
    for (int x = 0; x < d; ++x) {
        const double keep = epsilon * g[x];
        if (keep > 1.0) throw std::invalid_argument("epsilon G(x) exceeds 1");
        double kf = 0.0;
        for (int y = 0; y < d; ++y) {
            kx[y] = keep * m(x, y) + (1.0 - keep) * pooled[y];
            kf += kx[y] * f[y];
        }
        double spread = 0.0;
        for (int y = 0; y < d; ++y) {
            const double dev = f[y] - kf;
            spread += kx[y] * dev * dev;
        }
        total += eta_prev[x] * spread;
    }
    return total;
}

BoundReport nonasymptotic_bounds(const FiniteStateModel& fsm, int horizon, int particles, int r) {
    require_homogeneous(fsm, "nonasymptotic_bounds");
    if (r < 1) throw std::invalid_argument("r must be >= 1");
    BoundReport report;
    report.horizon = horizon;
    report.particles = particles;
    report.r = r;
    report.a_r = stats::khintchine_a(r);

    for (int m = 1; m <= 8; ++m) {
        const auto mm = check_Mm_condition(fsm, m);
        if (mm.holds) {
            report.mm_holds = true;
            report.m = m;
            report.delta = mm.delta;
            report.rho = mm.rho;
            break;
        }
    }
    report.alpha_h = backward_mixing_alpha(fsm);

    const SemigroupTable sg(fsm, horizon);
    report.b_pn.resize(horizon + 1);
    for (int p = 0; p <= horizon; ++p) report.b_pn[p] = sg.b(p, horizon);

    const double backward_rate = 1.0 - report.alpha_h * report.alpha_h;
    double sum = 0.0;
    for (int p = 0; p <= horizon; ++p) {
        double c = 0.0;
        for (int q = 0; q < p; ++q) c += std::pow(backward_rate, p - q);
        for (int q = p; q <= horizon; ++q)
            c += report.b_pn[q] * report.b_pn[q] * sg.beta_S(p, q);
        sum += report.b_pn[p] * report.b_pn[p] * c;
    }
    report.contraction_sum = sum;
    report.lr_bound = report.a_r * sum;
    report.normalized_bound = report.lr_bound / (horizon + 1);
    report.concentration_b = sum / (horizon + 1);

    if (report.mm_holds) {
        const double rd = report.rho * std::pow(report.delta, report.m);
        report.mm_bound_applicable = particles > (horizon + 1) * rd;
        report.mm_l2_bound = std::sqrt(
            2.0 * (horizon + 1) * rd * (4.0 + rd * (1.0 + 2.0 * (horizon + 2) / particles)));
    }
    return report;
}

IdentityReport identity_suite(const FiniteStateModel& fsm, int horizon,
                              const FiniteFunctional& functional, uint64_t seed) {
    check_additive(functional, "identity_suite");
    const int d = fsm.state_count;
    IdentityReport report;

    const auto flow = exact_flow(fsm, horizon);
    report.flow_error = flow.cross_check_error;

    // One-step duality with pseudo-random bounded f, g at each epoch.
    {
        RngStream rng(seed, 0, 0, 0, StreamPurpose::Generic);
        for (int epoch = 1; epoch <= std::min(horizon, 6); ++epoch) {
            for (int trial = 0; trial < 3; ++trial) {
                std::vector<double> f(d), g_fn(d);
                for (int x = 0; x < d; ++x) {
                    f[x] = 2.0 * rng.next_double() - 1.0;
                    g_fn[x] = 2.0 * rng.next_double() - 1.0;
                }
                const auto& eta = flow.eta[epoch - 1];
                const auto& m = fsm.transition(epoch);
                const auto& pot = fsm.potential(epoch - 1);
                const auto mg = m.apply(g_fn);
                double lhs = 0.0, mass = 0.0;
                for (int x = 0; x < d; ++x) {
                    lhs += eta[x] * pot[x] * f[x] * mg[x];
                    mass += eta[x] * pot[x];
                }
                lhs /= mass;
                const auto phi = phi_step(fsm, epoch, eta);
                const auto kernel = exact_backward_kernel(fsm, epoch, eta);
                const auto kf = kernel.apply(f);
                double rhs = 0.0;
                for (int y = 0; y < d; ++y) rhs += phi[y] * g_fn[y] * kf[y];
                report.duality_error = std::max(report.duality_error, std::abs(lhs - rhs));
            }
        }
    }

    // Backward decomposition: Q_n(path) = eta_n(x_n) prod M_{q, eta_{q-1}}, atom by atom.
    {
        const int n_enum = std::min(horizon, 4);
        const auto table = enumerate_path_measure(fsm, n_enum);
        std::vector<Mat> kernels;
        for (int q = 1; q <= n_enum; ++q)
            kernels.push_back(exact_backward_kernel(fsm, q, flow.eta[q - 1]));
        std::vector<int> path(n_enum + 1);
        for (std::size_t code = 0; code < table.atom_count(); ++code) {
            table.decode(code, path);
            double mass = flow.eta[n_enum][path[n_enum]];
            for (int q = n_enum; q >= 1; --q) mass *= kernels[q - 1](path[q], path[q - 1]);
            report.backward_decomposition_error =
                std::max(report.backward_decomposition_error, std::abs(mass - table.q_mass[code]));
        }
    }

    // Backward representation started from 10 random probability vectors on E_p.
    {
        const int p = 0;
        const int n_small = std::min(horizon, 3);
        const SemigroupTable sg(fsm, n_small);
        RngStream rng(seed, 0, 1, 0, StreamPurpose::Generic);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> eta(d);
            for (int x = 0; x < d; ++x) eta[x] = rng.next_double() + 1e-3;
            normalize_in_place(eta);
            std::vector<std::vector<double>> eta_flow{eta};  // Phi_{p,q}(eta)
            for (int q = 1; q <= n_small - p; ++q) {
                auto v = sg.Q(p, p + q).apply_left(eta);
                normalize_in_place(v);
                eta_flow.push_back(std::move(v));
            }
            std::vector<Mat> kernels;  // M_{q+1, Phi_{p,q}(eta)}
            for (int q = p; q < n_small; ++q)
                kernels.push_back(exact_backward_kernel(fsm, q + 1, eta_flow[q - p]));
            const auto eta_q = sg.Q(p, n_small).apply_left(eta);
            std::vector<int> states(n_small - p + 1);
            std::size_t atoms = 1;
            for (std::size_t i = 0; i < states.size(); ++i) atoms *= d;
            for (std::size_t code = 0; code < atoms; ++code) {
                std::size_t c = code;
                for (std::size_t i = 0; i < states.size(); ++i) {
                    states[i] = static_cast<int>(c % d);
                    c /= d;
                }
                double lhs = eta_q[states[n_small - p]];
                for (int q = n_small; q > p; --q)
                    lhs *= kernels[q - 1 - p](states[q - p], states[q - 1 - p]);
                double rhs = eta[states[0]];
                for (int q = p; q < n_small; ++q)
                    rhs *= fsm.potential(q)[states[q - p]] *
                           fsm.transition(q + 1)(states[q - p], states[q + 1 - p]);
                report.arbitrary_start_error =
                    std::max(report.arbitrary_start_error, std::abs(lhs - rhs));
            }
        }
    }

    // Semigroup identity Gamma_n(F) = gamma_p D_{p,n}(F) for every p <= n.
    {
        FiniteFunctional raw = functional;
        raw.normalized = false;
        const double target =
            exact_smoothed_additive(fsm, horizon, raw) * flow.normalizer[horizon];
        for (int p = 0; p <= horizon; ++p) {
            const auto d_pn = exact_D_pn(fsm, p, horizon, raw);
            const double value = dot(flow.gamma[p], d_pn);
            report.semigroup_error =
                std::max(report.semigroup_error,
                         std::abs(value - target) / std::max(1.0, std::abs(target)));
        }
    }
    return report;
}

}  // namespace fkgen::oracle
