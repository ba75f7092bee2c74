#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "fkgen/oracle.hpp"
#include "fkgen/runner.hpp"
#include "fkgen/stats.hpp"
#include "test_helpers.hpp"

using namespace fkgen;
using fktest::load_fixture;

namespace {

Scenario fixture_scenario(int horizon, int particles, uint64_t seed) {
    Scenario s;
    s.model = load_fixture("fk3.txt");
    s.horizon = horizon;
    s.particles = particles;
    s.seed = seed;
    s.finalize("terminal-additive", "value", false);
    return s;
}

}  // namespace

TEST_SUITE("stats") {

TEST_CASE("replicate batches are reproducible and parallelism-independent") {
    const auto s = fixture_scenario(4, 32, 303);
    const auto a = stats::run_replicates(s, {"smoothed", "gamma"}, 8, 303, 1);
    const auto b = stats::run_replicates(s, {"smoothed", "gamma"}, 8, 303, 1);
    const auto c = stats::run_replicates(s, {"smoothed", "gamma"}, 8, 303, 4);
    CHECK(a.values == b.values);
    CHECK(a.values == c.values);
}

TEST_CASE("unit potentials give gamma exactly one in every replicate") {
    Scenario s;
    s.model = FiniteStateModel::iid_toy();
    s.horizon = 6;
    s.particles = 50;
    s.seed = 307;
    s.finalize("terminal-additive", "value", false);
    const auto batch = stats::run_replicates(s, {"gamma"}, 16, 307);
    for (const double g : batch.column("gamma")) CHECK(g == 1.0);
}

TEST_CASE("gamma-weighted smoothed estimates are unbiased on the fixture") {
    const auto s = fixture_scenario(5, 64, 311);
    const auto batch = stats::run_replicates(s, {"gamma_smoothed", "gamma"}, 4000, 311);
    const auto flow = oracle::exact_flow(s.model, 5);
    const double gamma_f =
        oracle::exact_smoothed_additive(s.model, 5, s.functional) * flow.normalizer[5];
    CHECK(stats::unbiasedness_test(batch.column("gamma_smoothed"), gamma_f).pass);
    CHECK(stats::unbiasedness_test(batch.column("gamma"), flow.normalizer[5]).pass);
}

TEST_CASE("unbiasedness verdict edge cases") {
    const std::vector<double> constant = {2.0, 2.0, 2.0, 2.0};
    const auto exact = stats::unbiasedness_test(constant, 2.0);
    CHECK(exact.pass);
    CHECK(exact.z == 0.0);
    CHECK_FALSE(stats::unbiasedness_test(constant, 2.5).pass);

    // shifted by ten sample standard deviations
    std::vector<double> shifted(400);
    for (int i = 0; i < 400; ++i) shifted[i] = 10.0 + 0.01 * ((i % 2 == 0) ? 1 : -1);
    const double sd = stats::sample_stddev(shifted);
    CHECK_FALSE(stats::unbiasedness_test(shifted, 10.0 - 10.0 * sd).pass);
}

TEST_CASE("variance growth fit recovers planted power laws") {
    std::vector<double> horizons = {4, 9, 19, 39};
    std::vector<double> square(horizons.size()), linear(horizons.size());
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        square[i] = 3.0 * horizons[i] * horizons[i];
        linear[i] = 0.7 * horizons[i];
    }
    const auto sq_fit = stats::variance_growth_fit(horizons, square);
    CHECK(sq_fit.exponent == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(sq_fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    const auto lin_fit = stats::variance_growth_fit(horizons, linear);
    CHECK(lin_fit.exponent == doctest::Approx(1.0).epsilon(1e-10));

    CHECK_THROWS_AS(stats::variance_growth_fit(horizons, std::vector<double>{1.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        stats::variance_growth_fit(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 1.0}),
        std::invalid_argument);
}

TEST_CASE("concentration check: trivial pass and the b > 0 guard") {
    std::vector<double> values(1000, 0.0);
    values[0] = 0.05;  // one modest outlier
    const std::vector<double> eps = {0.5, 1.0};
    const auto rows = stats::concentration_check(values, 0.0, 100, 1.0, eps);
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) {
        CHECK(row.empirical == 0.0);
        CHECK(row.pass);
    }
    CHECK_THROWS_AS(stats::concentration_check(values, 0.0, 100, 0.0, eps),
                    std::invalid_argument);
}

TEST_CASE("local error field: constant functions are centered exactly") {
    Scenario s = fixture_scenario(3, 128, 313);
    const auto base = make_particle_model(s.model, 3);
    const auto frozen = init_cloud(base, 128, RunKey{313, 9999});
    const std::vector<double> constant_f = {2.0, 2.0, 2.0};
    const auto verdict =
        stats::local_error_field(s, frozen.positions, 2, constant_f, 200, 313);
    CHECK(verdict.mean_pass);
    CHECK(verdict.sample_variance == 0.0);
    CHECK(verdict.conditional_variance == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("local error field: indicator variance matches the one-step oracle") {
    Scenario s = fixture_scenario(3, 4096, 317);
    const auto base = make_particle_model(s.model, 3);
    const auto frozen = init_cloud(base, 4096, RunKey{317, 424242});
    const std::vector<double> indicator = {1.0, 0.0, 0.0};
    const auto verdict =
        stats::local_error_field(s, frozen.positions, 3, indicator, 10000, 317);
    CHECK(verdict.mean_pass);
    CHECK(verdict.variance_pass);  // within 10% of the exact-flow value
    const auto flow = oracle::exact_flow(s.model, 3);
    const double eta_f = flow.eta[3][0];
    CHECK(verdict.asymptotic_variance == doctest::Approx(eta_f * (1 - eta_f)).epsilon(1e-12));
}

TEST_CASE("local error field with one particle still has mean zero") {
    Scenario s = fixture_scenario(2, 1, 331);
    const std::vector<int> frozen = {1};
    const std::vector<double> f = {0.0, 1.0, 2.0};
    const auto verdict = stats::local_error_field(s, frozen, 1, f, 20000, 331);
    CHECK(verdict.mean_pass);
}

TEST_CASE("batches persist to CSV plus sidecar and reload identically") {
    const auto s = fixture_scenario(3, 16, 337);
    const auto batch = stats::run_replicates(s, {"smoothed", "gamma"}, 25, 337);
    stats::save_batch(batch, "test_batch.csv", "test_batch.json");
    const auto loaded = stats::load_batch("test_batch.csv", "test_batch.json");
    CHECK(loaded.values == batch.values);
    CHECK(loaded.estimators == batch.estimators);
    CHECK(loaded.base_seed == batch.base_seed);
    // verdicts on stored batches are deterministic
    const auto v1 = stats::unbiasedness_test(loaded.column("gamma"), 1.0);
    const auto v2 = stats::unbiasedness_test(loaded.column("gamma"), 1.0);
    CHECK(v1.z == v2.z);
    std::remove("test_batch.csv");
    std::remove("test_batch.json");
}

TEST_CASE("unknown estimators are rejected") {
    const auto s = fixture_scenario(2, 8, 347);
    CHECK_THROWS_AS(stats::run_replicates(s, {"mystery"}, 2, 347), ConfigError);
}

TEST_CASE("one-step variance oracle matches simulation under keep-probability selection") {
    Scenario s = fixture_scenario(3, 1024, 359);
    s.selection.rule = EpsilonRule::ReciprocalSup;
    const auto base = make_particle_model(s.model, 3);
    const auto frozen = init_cloud(base, 1024, RunKey{359, 777});

    const int d = 3;
    std::vector<double> eta_frozen(d, 0.0);
    for (const int x : frozen.positions) eta_frozen[x] += 1.0 / 1024;
    const auto& g = s.model.potential(0);
    double max_w = 0.0;
    for (const int x : frozen.positions) max_w = std::max(max_w, g[x]);
    const double epsilon = 1.0 / max_w;

    // conditional mean of eta_1^N(f) given the cloud, with the keep branch
    const std::vector<double> f = {1.0, 0.0, 0.0};
    const Mat& m = s.model.transition(1);
    std::vector<double> pooled(d, 0.0);
    double mass = 0.0;
    for (int x = 0; x < d; ++x) {
        mass += eta_frozen[x] * g[x];
        for (int y = 0; y < d; ++y) pooled[y] += eta_frozen[x] * g[x] * m(x, y);
    }
    for (double& v : pooled) v /= mass;
    double mean_pred = 0.0;
    for (int x = 0; x < d; ++x) {
        double kf = 0.0;
        for (int y = 0; y < d; ++y)
            kf += (epsilon * g[x] * m(x, y) + (1.0 - epsilon * g[x]) * pooled[y]) * f[y];
        mean_pred += eta_frozen[x] * kf;
    }

    const auto samples = one_step_field_samples(s, frozen.positions, 1, f, 20000, 359);
    std::vector<double> field(samples.size());
    for (std::size_t r = 0; r < samples.size(); ++r)
        field[r] = std::sqrt(1024.0) * (samples[r] - mean_pred);
    const double oracle_var =
        oracle::local_sampling_variance(s.model, 1, eta_frozen, f, epsilon);
    CHECK(std::abs(stats::mean(field)) <= 3.0 * std::sqrt(oracle_var / samples.size()));
    CHECK(stats::sample_variance(field) == doctest::Approx(oracle_var).epsilon(0.05));
}

TEST_CASE("gamma-weighted estimates stay unbiased with keep-probability selection") {
    Scenario s = fixture_scenario(4, 64, 353);
    s.selection.rule = EpsilonRule::ReciprocalSup;
    const auto batch = stats::run_replicates(s, {"gamma", "gamma_smoothed"}, 3000, 353);
    const auto flow = oracle::exact_flow(s.model, 4);
    const double gamma_f =
        oracle::exact_smoothed_additive(s.model, 4, s.functional) * flow.normalizer[4];
    CHECK(stats::unbiasedness_test(batch.column("gamma"), flow.normalizer[4]).pass);
    CHECK(stats::unbiasedness_test(batch.column("gamma_smoothed"), gamma_f).pass);
}

}  // TEST_SUITE
