#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fkgen/finite_model.hpp"
#include "fkgen/functional.hpp"
#include "fkgen/particle.hpp"

namespace fkgen {

// A fully resolved experiment description: model, particle count, horizon,
// selection rule, functional and replication plan. Built either from a JSON
// config file (CLI) or programmatically (tests, python bindings).
struct Scenario {
    FiniteStateModel model;
    int horizon = 0;
    int particles = 0;
    SelectionConfig selection;
    FiniteFunctional functional;
    int replicates = 1;
    uint64_t seed = 0;
    std::vector<std::string> estimators;
    std::string out_dir = "out";
    int threads = 0;  // 0 = use the process-wide budget

    // functional spec, kept so commands can rebuild terms for other horizons
    std::string functional_kind = "terminal-additive";
    std::string functional_term = "value";
    bool functional_normalized = false;

    // compare-variance grid and hprocess horizon list
    std::vector<int> grid_horizons;
    std::vector<int> grid_particles;
    std::vector<int> hprocess_horizons;

    nlohmann::json resolved;  // canonical resolved config (sorted keys)
    std::string id() const { return model.name + "/" + functional.label; }
    std::string hash() const;

    // Rebuilds `functional` and `resolved` after programmatic edits.
    void finalize(const std::string& functional_kind, const std::string& functional_term,
                  bool normalized);
};

// Built-in functional catalog. Terms:
//   one            f_p = 1 (pairwise: every term 1)
//   value          f_p(x) = state value at the epoch's node
//   indicator:<k>  f_p(x) = 1{x == k}
//   pair-product   pairwise only: f_0 = 0, f_p(u,v) = value(u) * value(v)
//   transition-count:<a>:<b>  pairwise only: f_0 = 0, f_p(u,v) = 1{u==a, v==b}
FiniteFunctional build_functional(const FiniteStateModel& model, int horizon,
                                  const std::string& kind, const std::string& term,
                                  bool normalized);

struct CliOverrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> threads;
};

// Parses and validates a config file. Unknown keys are rejected at every
// nesting level; failures throw ConfigError.
Scenario load_scenario(const std::string& config_path, const CliOverrides& overrides = {});
Scenario parse_scenario(const nlohmann::json& config, const CliOverrides& overrides = {});

// Fixture lookup: absolute paths and paths that resolve from the current
// directory win; otherwise FKGEN_FIXTURES is consulted.
std::string resolve_fixture_path(const std::string& name);

}  // namespace fkgen
