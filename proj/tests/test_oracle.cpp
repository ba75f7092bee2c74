#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "fkgen/oracle.hpp"
#include "fkgen/scenario.hpp"
#include "fkgen/stats.hpp"
#include "test_helpers.hpp"

using namespace fkgen;
using namespace fkgen::oracle;
using fktest::load_fixture;

namespace {

FiniteStateModel single_state(double g) {
    FiniteStateModel fsm;
    fsm.name = "d1";
    fsm.state_count = 1;
    fsm.initial = {1.0};
    Mat m(1, 1);
    m(0, 0) = 1.0;
    fsm.transitions.push_back(m);
    fsm.potentials.push_back({g});
    fsm.state_values = {1.0};
    fsm.validate();
    return fsm;
}

// Pinned regression values from fixtures/fk3.expected (computed once by the
// flow recursion and double-checked against path enumeration).
std::map<std::string, std::vector<double>> load_expected() {
    std::ifstream in(fktest::fixture_path("fk3.expected"));
    REQUIRE(in.good());
    std::map<std::string, std::vector<double>> table;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        std::string key;
        if (!(fields >> key)) continue;
        std::vector<double> values;
        double x;
        while (fields >> x) values.push_back(x);
        table[key] = values;
    }
    return table;
}

}  // namespace

TEST_SUITE("oracle") {

TEST_CASE("flow with unit potentials is the plain Markov flow") {
    auto fsm = load_fixture("fk3.txt");
    fsm.potentials[0] = {1.0, 1.0, 1.0};
    const auto flow = exact_flow(fsm, 4);
    for (int n = 0; n <= 4; ++n) CHECK(flow.normalizer[n] == doctest::Approx(1.0).epsilon(1e-14));
    // eta_n = eta_0 M^n, computed with an independent left-multiply loop
    std::vector<double> eta = fsm.initial;
    for (int n = 1; n <= 4; ++n) {
        std::vector<double> next(3, 0.0);
        for (int x = 0; x < 3; ++x)
            for (int y = 0; y < 3; ++y) next[y] += eta[x] * fsm.transitions[0](x, y);
        eta = next;
        for (int y = 0; y < 3; ++y) CHECK(flow.eta[n][y] == doctest::Approx(eta[y]).epsilon(1e-13));
    }
}

TEST_CASE("single-state flow multiplies the potential") {
    const auto fsm = single_state(0.7);
    const auto flow = exact_flow(fsm, 5);
    for (int n = 0; n <= 5; ++n)
        CHECK(flow.normalizer[n] == doctest::Approx(std::pow(0.7, n)).epsilon(1e-14));
}

TEST_CASE("flow matches independent brute-force enumeration") {
    const auto fsm = load_fixture("fk3.txt");
    for (const int n : {0, 1, 2, 3, 5}) {
        const auto brute = fktest::brute_force_paths(fsm, n);
        const auto flow = exact_flow(fsm, n);
        CHECK(flow.cross_check_error < 1e-12);
        CHECK(flow.normalizer[n] == doctest::Approx(brute.total).epsilon(1e-13));
        std::vector<double> marginal(3, 0.0);
        for (std::size_t k = 0; k < brute.paths.size(); ++k)
            marginal[brute.paths[k][n]] += brute.gamma_mass[k];
        for (int x = 0; x < 3; ++x)
            CHECK(flow.gamma[n][x] == doctest::Approx(marginal[x]).epsilon(1e-13));
    }
}

TEST_CASE("pinned fk3 regression values") {
    const auto fsm = load_fixture("fk3.txt");
    const auto expected = load_expected();
    const auto flow = exact_flow(fsm, 5);
    REQUIRE(expected.count("gamma5"));
    for (int x = 0; x < 3; ++x)
        CHECK(flow.gamma[5][x] == doctest::Approx(expected.at("gamma5")[x]).epsilon(1e-12));
    CHECK(flow.normalizer[5] == doctest::Approx(expected.at("Z5")[0]).epsilon(1e-12));
    for (int x = 0; x < 3; ++x)
        CHECK(flow.eta[5][x] == doctest::Approx(expected.at("eta5")[x]).epsilon(1e-12));

    const SemigroupTable sg(fsm, 5);
    const auto& beta = expected.at("betaS0q");
    for (int q = 1; q <= 4; ++q) {
        CHECK(sg.beta_S(0, q) == doctest::Approx(beta[q - 1]).epsilon(1e-12));
        if (q > 1) CHECK(sg.beta_S(0, q) < sg.beta_S(0, q - 1));  // forgetting
    }

    const auto mm2 = check_Mm_condition(fsm, 2);
    CHECK(mm2.holds);
    CHECK(mm2.delta == doctest::Approx(expected.at("mm2_delta")[0]).epsilon(1e-12));
    CHECK(mm2.rho == doctest::Approx(expected.at("mm2_rho")[0]).epsilon(1e-12));
}

TEST_CASE("backward kernel with source-independent rows returns eta") {
    FiniteStateModel fsm = FiniteStateModel::iid_toy();
    const std::vector<double> eta = {0.3, 0.7};
    const auto k = exact_backward_kernel(fsm, 1, eta);
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y) CHECK(k(x, y) == doctest::Approx(eta[y]).epsilon(1e-14));
}

TEST_CASE("backward kernel at d=1 is the identity") {
    const auto fsm = single_state(0.5);
    const std::vector<double> eta = {1.0};
    const auto k = exact_backward_kernel(fsm, 1, eta);
    CHECK(k(0, 0) == 1.0);
}

TEST_CASE("Mm condition on toy models") {
    const auto toy = FiniteStateModel::iid_toy();
    const auto mm = check_Mm_condition(toy, 1);
    CHECK(mm.holds);
    CHECK(mm.delta == 1.0);
    CHECK(mm.rho == 1.0);

    FiniteStateModel fsm = toy;
    fsm.potentials[0] = {0.5, 1.0};
    CHECK(check_Mm_condition(fsm, 1).delta == 2.0);
}

TEST_CASE("Mm condition matches a hand scan at m=2") {
    const auto fsm = load_fixture("fk3.txt");
    const auto mm = check_Mm_condition(fsm, 2);
    // independent scan of M^2 ratios
    const Mat& m = fsm.transitions[0];
    Mat m2(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += m(i, k) * m(k, j);
            m2(i, j) = acc;
        }
    double rho = 0.0;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            for (int xp = 0; xp < 3; ++xp) rho = std::max(rho, m2(x, y) / m2(xp, y));
    CHECK(mm.rho == doctest::Approx(rho).epsilon(1e-14));
    CHECK(mm.delta == doctest::Approx(0.9 / 0.3).epsilon(1e-14));
}

TEST_CASE("enumeration: horizon zero returns eta0") {
    const auto fsm = load_fixture("fk3.txt");
    const auto table = enumerate_path_measure(fsm, 0);
    REQUIRE(table.atom_count() == 3);
    for (int x = 0; x < 3; ++x)
        CHECK(table.q_mass[x] == doctest::Approx(fsm.initial[x]).epsilon(1e-14));
}

TEST_CASE("enumeration cap raises the documented error") {
    const auto fsm = load_fixture("fk3.txt");
    CHECK_THROWS_AS(enumerate_path_measure(fsm, 20, 1000), CapExceededError);
}

TEST_CASE("unit potentials make the path law Markov") {
    auto fsm = load_fixture("fk3.txt");
    fsm.potentials[0] = {1.0, 1.0, 1.0};
    const auto table = enumerate_path_measure(fsm, 3);
    std::vector<int> path(4);
    for (std::size_t code = 0; code < table.atom_count(); ++code) {
        table.decode(code, path);
        double markov = fsm.initial[path[0]];
        for (int p = 1; p <= 3; ++p) markov *= fsm.transitions[0](path[p - 1], path[p]);
        CHECK(table.q_mass[code] == doctest::Approx(markov).epsilon(1e-13));
    }
}

TEST_CASE("identity suite holds at 1e-12 on the fk3 fixture") {
    const auto fsm = load_fixture("fk3.txt");
    for (const char* kind : {"terminal-additive", "pairwise-additive"}) {
        const auto functional = build_functional(fsm, 4, kind, "value", false);
        const auto report = identity_suite(fsm, 4, functional, 2024);
        CHECK(report.flow_error < 1e-12);
        CHECK(report.duality_error < 1e-12);
        CHECK(report.backward_decomposition_error < 1e-12);
        CHECK(report.arbitrary_start_error < 1e-12);
        CHECK(report.semigroup_error < 1e-12);
    }
}

TEST_CASE("semigroup basics") {
    const auto fsm = load_fixture("fk3.txt");
    const SemigroupTable sg(fsm, 4);
    CHECK(sg.beta_S(2, 2) == 1.0);  // identity rows are distinct basis vectors
    CHECK(sg.b(4, 4) == 1.0);
    CHECK(sg.b(0, 4) >= 1.0);

    const auto toy = FiniteStateModel::iid_toy();
    const SemigroupTable toy_sg(toy, 3);
    for (int q = 1; q <= 3; ++q) CHECK(toy_sg.beta_S(0, q) == 0.0);

    // G_{p,n} has eta_p-mean one
    const auto flow = exact_flow(fsm, 4);
    for (int p = 0; p <= 4; ++p) {
        const auto g = sg.G_norm(p, 4, flow.eta[p]);
        CHECK(dot(flow.eta[p], g) == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("h-process: unit potentials reduce to the Markov chain") {
    auto fsm = load_fixture("fk3.txt");
    fsm.potentials[0] = {1.0, 1.0, 1.0};
    const auto hp = h_process(fsm);
    CHECK(hp.eigenvalue == doctest::Approx(1.0).epsilon(1e-12));
    for (int x = 0; x < 3; ++x) CHECK(hp.h[x] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(hp.stationary_gap < 1e-10);
    // mu_h equals the stationary law of M
    const auto mu_check = fsm.transitions[0].apply_left(hp.mu_h);
    for (int x = 0; x < 3; ++x)
        CHECK(mu_check[x] == doctest::Approx(hp.mu_h[x]).epsilon(1e-9));
}

TEST_CASE("h-process at d=1") {
    const auto fsm = single_state(0.6);
    const auto hp = h_process(fsm);
    CHECK(hp.eigenvalue == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(hp.h[0] == 1.0);
    CHECK(hp.mu_h[0] == 1.0);
}

TEST_CASE("h-process reports the eigen-vs-stationary gap instead of asserting it") {
    // Non-reversible three-state model: the two constructions genuinely
    // differ and the gap says by how much.
    const auto fsm = load_fixture("fk3.txt");
    const auto hp = h_process(fsm);
    const auto expected = load_expected();
    CHECK(hp.eigenvalue == doctest::Approx(expected.at("h_eigenvalue")[0]).epsilon(1e-11));
    CHECK(hp.stationary_gap > 0.01);
    CHECK(vec_sum(hp.mu_h) == doctest::Approx(1.0).epsilon(1e-13));
    const auto stat_check = hp.m_h.apply_left(hp.m_h_stationary);
    for (int x = 0; x < 3; ++x)
        CHECK(stat_check[x] == doctest::Approx(hp.m_h_stationary[x]).epsilon(1e-9));
}

TEST_CASE("h-process on a reversible two-state fixture") {
    const auto fsm = load_fixture("rev2.txt");
    const auto hp = h_process(fsm);
    CHECK(hp.stationary_gap < 1e-10);
    // eigen-consistency Q h = lambda h
    const Mat& m = fsm.transitions[0];
    for (int x = 0; x < 2; ++x) {
        double qh = 0.0;
        for (int y = 0; y < 2; ++y) qh += fsm.potentials[0][x] * m(x, y) * hp.h[y];
        CHECK(qh == doctest::Approx(hp.eigenvalue * hp.h[x]).epsilon(1e-10));
    }
    CHECK(vec_sum(hp.mu_h) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("exact smoothing: constant terms count epochs") {
    const auto fsm = load_fixture("fk3.txt");
    const auto ones = build_functional(fsm, 6, "terminal-additive", "one", false);
    CHECK(exact_smoothed_additive(fsm, 6, ones) == doctest::Approx(7.0).epsilon(1e-13));
    const auto ones_norm = build_functional(fsm, 6, "terminal-additive", "one", true);
    CHECK(exact_smoothed_additive(fsm, 6, ones_norm) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("exact smoothing: symmetric toy gives zero") {
    const auto toy = FiniteStateModel::iid_toy();
    const auto f = build_functional(toy, 5, "terminal-additive", "value", false);
    CHECK(exact_smoothed_additive(toy, 5, f) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("exact smoothing matches brute force for both kinds") {
    const auto fsm = load_fixture("fk3.txt");
    for (const char* kind : {"terminal-additive", "pairwise-additive"}) {
        for (const char* term : {"value", "indicator:2"}) {
            const auto f = build_functional(fsm, 4, kind, term, false);
            const double exact = exact_smoothed_additive(fsm, 4, f);
            const double brute = fktest::brute_force_smoothed(fsm, 4, f);
            CHECK(exact == doctest::Approx(brute).epsilon(1e-12));
        }
    }
    const auto pair = build_functional(fsm, 4, "pairwise-additive", "pair-product", false);
    CHECK(exact_smoothed_additive(fsm, 4, pair) ==
          doctest::Approx(fktest::brute_force_smoothed(fsm, 4, pair)).epsilon(1e-12));
    const auto counts =
        build_functional(fsm, 4, "pairwise-additive", "transition-count:0:2", false);
    CHECK(exact_smoothed_additive(fsm, 4, counts) ==
          doctest::Approx(fktest::brute_force_smoothed(fsm, 4, counts)).epsilon(1e-12));
}

TEST_CASE("general functionals are smoothed by enumeration") {
    const auto fsm = load_fixture("fk3.txt");
    FiniteFunctional general;
    general.kind = FunctionalKind::General;
    general.whole_path = [](std::span<const int> path) {
        double prod = 1.0;
        for (const int x : path) prod *= (x + 1);
        return prod;
    };
    const auto brute = fktest::brute_force_paths(fsm, 3);
    double expected = 0.0;
    for (std::size_t k = 0; k < brute.paths.size(); ++k) {
        double prod = 1.0;
        for (const int x : brute.paths[k]) prod *= (x + 1);
        expected += brute.gamma_mass[k] * prod;
    }
    expected /= brute.total;
    CHECK(exact_smoothed_additive(fsm, 3, general) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("clt variance at horizon zero is the initial variance") {
    const auto fsm = load_fixture("fk3.txt");
    const auto f = build_functional(fsm, 0, "terminal-additive", "value", false);
    double mean = 0.0, second = 0.0;
    for (int x = 0; x < 3; ++x) {
        mean += fsm.initial[x] * fsm.state_values[x];
        second += fsm.initial[x] * fsm.state_values[x] * fsm.state_values[x];
    }
    const double expected = second - mean * mean;
    CHECK(clt_variance(fsm, 0, f, EstimatorKind::Backward) ==
          doctest::Approx(expected).epsilon(1e-13));
    CHECK(clt_variance(fsm, 0, f, EstimatorKind::Genealogical) ==
          doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("genealogical variance reproduces the (n+1)(n+2)/2 law") {
    const auto toy = FiniteStateModel::iid_toy();
    for (const int n : {3, 9}) {
        const auto f = build_functional(toy, n, "terminal-additive", "value", false);
        const double expected = (n + 1.0) * (n + 2.0) / 2.0;
        CHECK(clt_variance(toy, n, f, EstimatorKind::Genealogical) ==
              doctest::Approx(expected).epsilon(1e-12));
        // the backward estimator stays linear on the same scenario
        CHECK(clt_variance(toy, n, f, EstimatorKind::Backward) ==
              doctest::Approx(n + 1.0).epsilon(1e-12));
    }
}

TEST_CASE("local sampling variance reduces to Var_eta at epsilon zero") {
    const auto fsm = load_fixture("fk3.txt");
    const auto flow = exact_flow(fsm, 3);
    std::vector<double> f = {1.0, 0.0, 0.0};
    const double v = local_sampling_variance(fsm, 3, flow.eta[2], f, 0.0);
    const double p = flow.eta[3][0];
    CHECK(v == doctest::Approx(p * (1 - p)).epsilon(1e-12));
    // epsilon > 0 keeps more mass on the diagonal branch; value stays finite
    const double v_eps = local_sampling_variance(fsm, 3, flow.eta[2], f, 0.5);
    CHECK(v_eps > 0.0);
}

TEST_CASE("khintchine constants and the bound report") {
    CHECK(stats::khintchine_a(2) == doctest::Approx(1.0).epsilon(1e-14));
    double prev = 0.0;
    for (int r = 1; r <= 10; ++r) {
        const double a = stats::khintchine_a(r);
        CHECK(a >= prev - 1e-12);
        prev = a;
    }

    // perfect mixing: b = 1, beta(S_{p,q}) = 0 for q > p, backward terms vanish
    const auto toy = FiniteStateModel::iid_toy();
    const auto report = nonasymptotic_bounds(toy, 5, 100, 2);
    CHECK(report.a_r == doctest::Approx(1.0).epsilon(1e-14));
    for (const double b : report.b_pn) CHECK(b == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(report.alpha_h == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(report.contraction_sum == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(report.lr_bound == doctest::Approx(6.0).epsilon(1e-12));

    const auto fsm = load_fixture("fk3.txt");
    const auto r2 = nonasymptotic_bounds(fsm, 5, 1000, 2);
    CHECK(r2.mm_holds);
    CHECK(r2.m == 1);
    CHECK(r2.alpha_h == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(r2.lr_bound > 0.0);
    CHECK(r2.mm_l2_bound > 0.0);
}

TEST_CASE("D_pn rejects general functionals and bad epochs") {
    const auto fsm = load_fixture("fk3.txt");
    const auto f = build_functional(fsm, 3, "terminal-additive", "value", false);
    CHECK_THROWS_AS(exact_D_pn(fsm, 5, 3, f), std::out_of_range);
    FiniteFunctional general;
    general.kind = FunctionalKind::General;
    general.whole_path = [](std::span<const int>) { return 0.0; };
    CHECK_THROWS_AS(exact_D_pn(fsm, 0, 3, general), std::invalid_argument);
}

}  // TEST_SUITE
