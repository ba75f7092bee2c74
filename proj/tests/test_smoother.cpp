#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "doctest.h"
#include "fkgen/io.hpp"
#include "fkgen/runner.hpp"
#include "fkgen/scenario.hpp"
#include "fkgen/smoother.hpp"
#include "fkgen/stats.hpp"
#include "test_helpers.hpp"

using namespace fkgen;
using fktest::load_fixture;

namespace {

// Independent oracle: expands Q_n^N over all N^(n+1) particle index paths
// with its own weight arithmetic (no library matrices or enumeration).
double enumerate_estimate(const CloudHistory<int>& history, const FeynmanKacModel<int>& model,
                          const PathFunctional<int>& functional) {
    const int n = history.horizon();
    const int count = history.particle_count();
    // backward weights per epoch, written out longhand
    std::vector<std::vector<double>> rows(n);  // rows[q-1][j*count+i]
    for (int q = 1; q <= n; ++q) {
        rows[q - 1].resize(static_cast<std::size_t>(count) * count);
        for (int j = 0; j < count; ++j) {
            double norm = 0.0;
            for (int i = 0; i < count; ++i) {
                const double a =
                    model.potential(q - 1, history.at(q - 1).positions[i]) *
                    model.transition_density(q, history.at(q - 1).positions[i],
                                             history.at(q).positions[j]);
                rows[q - 1][static_cast<std::size_t>(j) * count + i] = a;
                norm += a;
            }
            for (int i = 0; i < count; ++i)
                rows[q - 1][static_cast<std::size_t>(j) * count + i] /= norm;
        }
    }
    std::vector<int> idx(n + 1, 0);
    std::vector<int> path(n + 1);
    double total = 0.0;
    while (true) {
        double mass = 1.0 / count;
        for (int q = n; q >= 1; --q)
            mass *= rows[q - 1][static_cast<std::size_t>(idx[q]) * count + idx[q - 1]];
        for (int q = 0; q <= n; ++q) path[q] = history.at(q).positions[idx[q]];
        total += mass * functional.eval_path(path);
        int q = 0;
        while (q <= n && ++idx[q] == count) idx[q++] = 0;
        if (q > n) break;
    }
    return total / functional.normalizer(n);
}

// state-path frequencies of the enumerated particle measure
std::map<std::vector<int>, double> enumerate_state_paths(const CloudHistory<int>& history,
                                                         const FeynmanKacModel<int>& model) {
    const int n = history.horizon();
    std::map<std::vector<int>, double> out;
    PathFunctional<int> unit;
    unit.kind = FunctionalKind::General;
    // reuse enumerate_estimate by scoring indicator functionals per state path
    std::vector<int> probe(n + 1, 0);
    while (true) {
        unit.whole_path = [&probe](std::span<const int> path) {
            for (std::size_t q = 0; q < path.size(); ++q)
                if (path[q] != probe[q]) return 0.0;
            return 1.0;
        };
        const double mass = enumerate_estimate(history, model, unit);
        if (mass > 0.0) out[probe] = mass;
        int q = 0;
        while (q <= n && ++probe[q] == 3) probe[q++] = 0;
        if (q > n) break;
    }
    return out;
}

}  // namespace

TEST_SUITE("smoother") {

TEST_CASE("uniform backward rows when the density forgets its source") {
    const auto model = make_particle_model(FiniteStateModel::iid_toy(), 3);
    const RunKey key{101, 0};
    const auto history = run_filter(model, 8, SelectionConfig{}, 1, key);
    const auto w = backward_matrix(history.at(0), history.at(1), model);
    for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 8; ++i) CHECK(w.at(j, i) == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("two-particle row normalization by hand") {
    FeynmanKacModel<int> model;
    model.horizon = 1;
    model.initial_sampler = [](RngStream&) { return 0; };
    model.mutation_sampler = [](int, const int&, RngStream&) { return 0; };
    model.potential = [](int, const int&) { return 1.0; };
    model.transition_density = [](int, const int& x, const int&) { return x == 0 ? 0.2 : 0.6; };

    ParticleCloud<int> prev;
    prev.epoch = 0;
    prev.positions = {0, 1};
    ParticleCloud<int> cur;
    cur.epoch = 1;
    cur.positions = {0, 0};
    const auto w = backward_matrix(prev, cur, model);
    for (int j = 0; j < 2; ++j) {
        CHECK(w.at(j, 0) == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(w.at(j, 1) == doctest::Approx(0.75).epsilon(1e-15));
    }
}

TEST_CASE("hand-pinned 4x4 backward weights on the fixture") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 1);
    ParticleCloud<int> prev;
    prev.epoch = 0;
    prev.positions = {0, 1, 2, 0};
    ParticleCloud<int> cur;
    cur.epoch = 1;
    cur.positions = {2, 1, 0, 1};
    const auto w = backward_matrix(prev, cur, model);
    for (int j = 0; j < 4; ++j) {
        double direct[4];
        double norm = 0.0;
        for (int i = 0; i < 4; ++i) {
            direct[i] = fsm.potentials[0][prev.positions[i]] *
                        fsm.transitions[0](prev.positions[i], cur.positions[j]);
            norm += direct[i];
        }
        double row_sum = 0.0;
        for (int i = 0; i < 4; ++i) {
            CHECK(w.at(j, i) == doctest::Approx(direct[i] / norm).epsilon(1e-12));
            row_sum += w.at(j, i);
        }
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("registered log densities give the same weights via max-shift") {
    const auto fsm = load_fixture("fk3.txt");
    auto model = make_particle_model(fsm, 2);
    auto log_model = model;
    log_model.log_transition_density = [fsm](int n, const int& x, const int& y) {
        return std::log(fsm.transition(n)(x, y));
    };
    const RunKey key{103, 0};
    const auto history = run_filter(model, 16, SelectionConfig{}, 2, key);
    const auto w_lin = backward_matrix(history.at(0), history.at(1), model);
    const auto w_log = backward_matrix(history.at(0), history.at(1), log_model);
    for (int j = 0; j < 16; ++j)
        for (int i = 0; i < 16; ++i)
            CHECK(w_lin.at(j, i) == doctest::Approx(w_log.at(j, i)).epsilon(1e-13));
}

TEST_CASE("forward update: averaging, telescoping, hand arithmetic") {
    // uniform weights + zero term -> every new value is the running mean
    BackwardWeightMatrix uniform;
    uniform.epoch = 1;
    uniform.n_particles = 2;
    uniform.weights = {0.5, 0.5, 0.5, 0.5};
    ParticleCloud<int> prev;
    prev.epoch = 0;
    prev.positions = {0, 1};
    ParticleCloud<int> cur;
    cur.epoch = 1;
    cur.positions = {0, 1};
    PathFunctional<int> zero_then;
    zero_then.kind = FunctionalKind::TerminalAdditive;
    zero_then.node_terms = {[](const int&) { return 5.0; }, [](const int&) { return 0.0; }};
    SmootherState state;
    state.epoch = 0;
    state.values = {10.0, 20.0};
    const auto next = forward_update(state, uniform, prev, cur, zero_then);
    CHECK(next.values[0] == 15.0);
    CHECK(next.values[1] == 15.0);

    // direct arithmetic: 1 + 0.25*10 + 0.75*20 = 18.5
    BackwardWeightMatrix skew = uniform;
    skew.weights = {0.25, 0.75, 0.25, 0.75};
    PathFunctional<int> one_then;
    one_then.kind = FunctionalKind::TerminalAdditive;
    one_then.node_terms = {[](const int&) { return 0.0; }, [](const int&) { return 1.0; }};
    const auto direct = forward_update(state, skew, prev, cur, one_then);
    CHECK(direct.values[0] == 18.5);
}

TEST_CASE("constant terms telescope to n+1") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 5);
    const auto ones = to_path_functional(build_functional(fsm, 5, "terminal-additive", "one", false));
    const auto run = run_smoother(model, 32, SelectionConfig{}, 5, ones, RunKey{107, 0});
    for (int p = 0; p <= 5; ++p)
        CHECK(run.per_epoch[p] == doctest::Approx(p + 1.0).epsilon(1e-12));

    const auto ones_norm =
        to_path_functional(build_functional(fsm, 5, "terminal-additive", "one", true));
    const auto run_norm = run_smoother(model, 32, SelectionConfig{}, 5, ones_norm, RunKey{107, 0});
    CHECK(run_norm.estimate == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("horizon zero smoothing is the empirical mean of f0") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 0);
    const auto f = to_path_functional(build_functional(fsm, 0, "terminal-additive", "value", false));
    const auto run = run_smoother(model, 64, SelectionConfig{}, 0, f, RunKey{109, 0});
    const auto history = run_filter(model, 64, SelectionConfig{}, 0, RunKey{109, 0});
    const double empirical =
        empirical_measure(history.at(0), [&](const int& x) { return fsm.value_of(x); });
    CHECK(run.estimate == doctest::Approx(empirical).epsilon(1e-15));
}

TEST_CASE("deterministic identity: eta_n(F_n^N) equals the enumerated measure") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 2);
    for (uint32_t seed_ix = 0; seed_ix < 6; ++seed_ix) {
        const RunKey key{1000 + seed_ix, 0};
        const auto history = run_filter(model, 3, SelectionConfig{}, 2, key);
        for (const char* kind : {"terminal-additive", "pairwise-additive"}) {
            const auto f = to_path_functional(build_functional(fsm, 2, kind, "value", false));
            const double forward = smoothed_estimate_batch(history, model, f);
            const double enumerated = enumerate_estimate(history, model, f);
            CHECK(forward == doctest::Approx(enumerated).epsilon(1e-12));
        }
    }
}

TEST_CASE("batch mode equals the online recursion") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 4);
    const auto f = to_path_functional(build_functional(fsm, 4, "terminal-additive", "value", false));
    const RunKey key{211, 0};
    const auto online = run_smoother(model, 24, SelectionConfig{}, 4, f, key);
    const auto history = run_filter(model, 24, SelectionConfig{}, 4, key);
    CHECK(smoothed_estimate_batch(history, model, f) ==
          doctest::Approx(online.estimate).epsilon(1e-12));

    const auto pair =
        to_path_functional(build_functional(fsm, 4, "pairwise-additive", "pair-product", false));
    const auto online_pair = run_smoother(model, 24, SelectionConfig{}, 4, pair, key);
    CHECK(smoothed_estimate_batch(history, model, pair) ==
          doctest::Approx(online_pair.estimate).epsilon(1e-12));
}

TEST_CASE("general functionals go through batch enumeration") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 2);
    const auto history = run_filter(model, 3, SelectionConfig{}, 2, RunKey{223, 0});
    PathFunctional<int> general;
    general.kind = FunctionalKind::General;
    general.whole_path = [](std::span<const int> path) {
        double prod = 1.0;
        for (const int x : path) prod *= (1.0 + 0.5 * x);
        return prod;
    };
    CHECK(smoothed_estimate_batch(history, model, general) ==
          doctest::Approx(enumerate_estimate(history, model, general)).epsilon(1e-12));
    CHECK_THROWS_AS(smoothed_estimate_batch(history, model, general, 10), CapExceededError);
    // no forward recursion exists for general functionals
    CHECK_THROWS_AS(smoother_init(history.at(0), general), std::invalid_argument);
}

TEST_CASE("one smoother step performs exactly N^2 density evaluations") {
    const auto fsm = load_fixture("fk3.txt");
    auto model = make_particle_model(fsm, 1);
    auto counter = std::make_shared<std::atomic<uint64_t>>(0);
    const auto inner = model.transition_density;
    model.transition_density = [counter, inner](int n, const int& x, const int& y) {
        counter->fetch_add(1, std::memory_order_relaxed);
        return inner(n, x, y);
    };
    const int count = 7;
    const auto history = run_filter(model, count, SelectionConfig{}, 1, RunKey{227, 0});
    counter->store(0);
    const auto w = backward_matrix(history.at(0), history.at(1), model);
    CHECK(counter->load() == static_cast<uint64_t>(count) * count);

    const auto f = to_path_functional(build_functional(fsm, 1, "terminal-additive", "value", false));
    SmootherState state = smoother_init(history.at(0), f);
    counter->store(0);
    state = forward_update(state, w, history.at(0), history.at(1), f);
    CHECK(counter->load() == 0);  // the matrix carries all N^2 evaluations
}

TEST_CASE("collapsed finite-state runner matches the generic recursion and filter") {
    Scenario scenario;
    scenario.model = load_fixture("fk3.txt");
    scenario.horizon = 5;
    scenario.particles = 40;
    scenario.seed = 229;
    scenario.finalize("terminal-additive", "value", false);

    RunRequest request;
    request.smoothed = true;
    request.gamma = true;
    request.genealogical = true;
    const auto fast = run_replicate(scenario, 0, request);

    const auto model = make_particle_model(scenario.model, 5);
    const RunKey key{229, 0};
    const auto f = to_path_functional(scenario.functional);
    const auto generic = run_smoother(model, 40, SelectionConfig{}, 5, f, key);
    CHECK(fast.smoothed == doctest::Approx(generic.estimate).epsilon(1e-10));
    CHECK(fast.log_normalizer == generic.log_normalizer);  // same draws, same sums

    const auto history = run_filter(model, 40, SelectionConfig{}, 5, key);
    CHECK(fast.genealogical ==
          doctest::Approx(genealogical_estimate(history, f)).epsilon(1e-12));

    // pairwise variant
    Scenario pair_scenario = scenario;
    pair_scenario.finalize("pairwise-additive", "pair-product", false);
    const auto fast_pair = run_replicate(pair_scenario, 0, request);
    const auto generic_pair = run_smoother(model, 40, SelectionConfig{}, 5,
                                           to_path_functional(pair_scenario.functional), key);
    CHECK(fast_pair.smoothed == doctest::Approx(generic_pair.estimate).epsilon(1e-10));

    // epsilon > 0 keeps some particles; both routes must still agree
    Scenario keep_scenario = scenario;
    keep_scenario.selection.rule = EpsilonRule::ReciprocalSup;
    const auto fast_keep = run_replicate(keep_scenario, 0, request);
    SelectionConfig keep_config;
    keep_config.rule = EpsilonRule::ReciprocalSup;
    const auto generic_keep = run_smoother(model, 40, keep_config, 5, f, key);
    CHECK(fast_keep.smoothed == doctest::Approx(generic_keep.estimate).epsilon(1e-10));
    CHECK(fast_keep.log_normalizer == generic_keep.log_normalizer);
}

TEST_CASE("backward path sampling: single particle, uniform rows, atom frequencies") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 2);
    {
        const auto history = run_filter(model, 1, SelectionConfig{}, 2, RunKey{233, 0});
        const auto path = sample_backward_path(history, model, RunKey{233, 0});
        for (int q = 0; q <= 2; ++q) CHECK(path[q] == history.at(q).positions[0]);
    }

    // uniform-rows scenario: G = 1 and a source-independent density make the
    // sampled indices iid uniform; distinct per-epoch positions expose them
    {
        FiniteStateModel u3;
        u3.name = "uniform3";
        u3.state_count = 3;
        u3.initial = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        Mat m(3, 3, 1.0 / 3.0);
        u3.transitions.push_back(m);
        u3.potentials.push_back({1.0, 1.0, 1.0});
        u3.state_values = {0.0, 1.0, 2.0};
        u3.validate();
        const auto umodel = make_particle_model(u3, 2);

        CloudHistory<int> history;
        for (int epoch = 0; epoch <= 2; ++epoch) {
            ParticleCloud<int> cloud;
            cloud.epoch = epoch;
            cloud.positions = {0, 1, 2};
            if (epoch > 0) cloud.parent_index = {0, 0, 0};
            history.clouds.push_back(cloud);
        }
        const int draws = 27000;
        std::map<std::vector<int>, int> freq;
        for (int k = 0; k < draws; ++k) {
            const auto path =
                sample_backward_path(history, umodel, RunKey{241, 0}, static_cast<uint32_t>(k));
            ++freq[path];
        }
        double chi2 = 0.0;
        const double expected = draws / 27.0;
        int cells = 0;
        for (const auto& [path, count_k] : freq) {
            const double dev = count_k - expected;
            chi2 += dev * dev / expected;
            ++cells;
        }
        CHECK(cells == 27);
        CHECK(chi2 < 54.05);  // chi-square(26) at the 0.1% level
    }

    // empirical state-path frequencies against the enumerated atoms
    {
        const int count = 3;
        const auto history = run_filter(model, count, SelectionConfig{}, 2, RunKey{251, 0});
        const auto atoms = enumerate_state_paths(history, model);
        const int draws = 100000;
        std::map<std::vector<int>, int> freq;
        for (int k = 0; k < draws; ++k) {
            const RunKey key{257, 0};
            const auto path = sample_backward_path(history, model, key, static_cast<uint32_t>(k));
            ++freq[path];
        }
        for (const auto& [path, mass] : atoms) {
            const double observed = freq.count(path) ? freq.at(path) / double(draws) : 0.0;
            const double sd = std::sqrt(mass * (1 - mass) / draws);
            CHECK(std::abs(observed - mass) < std::max(3.0 * sd, 1e-4));
        }
    }
}

TEST_CASE("streaming rows reproduce the materialized recursion exactly") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 4);
    const RunKey key{269, 0};
    const auto history = run_filter(model, 20, SelectionConfig{}, 4, key);
    for (const char* kind : {"terminal-additive", "pairwise-additive"}) {
        const auto f = to_path_functional(build_functional(fsm, 4, kind, "value", false));
        SmootherState dense = smoother_init(history.at(0), f);
        SmootherState streamed = dense;
        for (int q = 1; q <= 4; ++q) {
            const auto w = backward_matrix(history.at(q - 1), history.at(q), model);
            dense = forward_update(dense, w, history.at(q - 1), history.at(q), f);
            streamed = forward_update_streaming(streamed, history.at(q - 1), history.at(q),
                                                model, f);
        }
        CHECK(dense.values == streamed.values);  // same arithmetic, same order
    }
}

TEST_CASE("backward rows are strictly positive and stochastic on random models") {
    RngStream rng(977, 0, 0, 0, StreamPurpose::Generic);
    for (int trial = 0; trial < 10; ++trial) {
        FiniteStateModel fsm;
        fsm.name = "random";
        fsm.state_count = 3;
        fsm.initial = {rng.next_double() + 0.1, rng.next_double() + 0.1, rng.next_double() + 0.1};
        normalize_in_place(fsm.initial);
        Mat m(3, 3);
        for (int i = 0; i < 3; ++i) {
            double row = 0.0;
            for (int j = 0; j < 3; ++j) {
                m(i, j) = rng.next_double() + 0.05;
                row += m(i, j);
            }
            for (int j = 0; j < 3; ++j) m(i, j) /= row;
        }
        fsm.transitions.push_back(m);
        fsm.potentials.push_back({0.2 + 0.8 * rng.next_double(), 0.2 + 0.8 * rng.next_double(),
                                  0.2 + 0.8 * rng.next_double()});
        fsm.state_values = {0.0, 1.0, 2.0};
        fsm.validate();

        const auto model = make_particle_model(fsm, 2);
        const RunKey key{static_cast<uint64_t>(500 + trial), 0};
        const auto history = run_filter(model, 16, SelectionConfig{}, 2, key);
        for (int q = 1; q <= 2; ++q) {
            const auto w = backward_matrix(history.at(q - 1), history.at(q), model);
            for (int j = 0; j < 16; ++j) {
                double row_sum = 0.0;
                for (int i = 0; i < 16; ++i) {
                    CHECK(w.at(j, i) > 0.0);  // (H) holds and G > 0
                    row_sum += w.at(j, i);
                }
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("history and smoother snapshots round-trip through files") {
    const auto fsm = load_fixture("fk3.txt");
    const auto model = make_particle_model(fsm, 3);
    const auto history = run_filter(model, 12, SelectionConfig{}, 3, RunKey{263, 0});
    const std::string path = "test_history_roundtrip.jsonl";
    io::write_history_jsonl(history, path);
    const auto loaded = io::read_history_jsonl(path);
    REQUIRE(loaded.clouds.size() == history.clouds.size());
    for (int n = 0; n <= 3; ++n) {
        CHECK(loaded.at(n).positions == history.at(n).positions);
        CHECK(loaded.at(n).parent_index == history.at(n).parent_index);
        CHECK(loaded.at(n).log_normalizer == history.at(n).log_normalizer);
    }
    std::remove(path.c_str());

    SmootherState state;
    state.epoch = 3;
    state.values = {1.0, 2.5, -0.125};
    const std::string spath = "test_smoother_roundtrip.json";
    io::write_smoother_state(state, "terminal-additive/value", spath);
    std::string label;
    const auto restored = io::read_smoother_state(spath, &label);
    CHECK(restored.epoch == 3);
    CHECK(restored.values == state.values);
    CHECK(label == "terminal-additive/value");
    std::remove(spath.c_str());
}

}  // TEST_SUITE
