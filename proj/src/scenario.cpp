#include "fkgen/scenario.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fkgen/io.hpp"

namespace fkgen {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

template <typename T>
T optional_or(const json& obj, const char* key, const std::string& where, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

Mat matrix_from_json(const json& rows, int d, const std::string& where) {
    if (!rows.is_array() || static_cast<int>(rows.size()) != d)
        throw ConfigError(where + " must be a " + std::to_string(d) + "-row matrix");
    Mat m(d, d);
    for (int i = 0; i < d; ++i) {
        const auto& row = rows.at(i);
        if (!row.is_array() || static_cast<int>(row.size()) != d)
            throw ConfigError(where + " row " + std::to_string(i) + " must have " +
                              std::to_string(d) + " entries");
        for (int j = 0; j < d; ++j) m(i, j) = row.at(j).get<double>();
    }
    return m;
}

FiniteStateModel model_from_json(const json& spec) {
    if (!spec.is_object()) throw ConfigError("'model' must be an object");
    const std::string family = require<std::string>(spec, "family", "model");

    if (family == "iid-toy") {
        reject_unknown_keys(spec, {"family", "states", "eta0", "values"}, "model");
        FiniteStateModel fsm;
        fsm.name = "iid-toy";
        fsm.state_count = optional_or<int>(spec, "states", "model", 2);
        fsm.initial = optional_or<std::vector<double>>(
            spec, "eta0", "model",
            std::vector<double>(fsm.state_count, 1.0 / fsm.state_count));
        Mat m(fsm.state_count, fsm.state_count);
        for (int i = 0; i < fsm.state_count; ++i)
            for (int j = 0; j < fsm.state_count; ++j) m(i, j) = fsm.initial[j];
        fsm.transitions.push_back(m);
        fsm.potentials.push_back(std::vector<double>(fsm.state_count, 1.0));
        if (spec.contains("values")) {
            fsm.state_values = require<std::vector<double>>(spec, "values", "model");
        } else if (fsm.state_count == 2) {
            fsm.state_values = {-1.0, 1.0};
        } else {
            fsm.state_values.resize(fsm.state_count);
            for (int i = 0; i < fsm.state_count; ++i) fsm.state_values[i] = i;
        }
        fsm.homogeneous = true;
        fsm.validate();
        return fsm;
    }

    if (family == "finite" || family == "finite-homogeneous") {
        if (spec.contains("fixture")) {
            reject_unknown_keys(spec, {"family", "fixture"}, "model");
            return FiniteStateModel::load(
                resolve_fixture_path(require<std::string>(spec, "fixture", "model")));
        }
        reject_unknown_keys(spec, {"family", "states", "eta0", "M", "G", "values"}, "model");
        FiniteStateModel fsm;
        fsm.name = "finite-inline";
        fsm.state_count = require<int>(spec, "states", "model");
        fsm.initial = require<std::vector<double>>(spec, "eta0", "model");
        const auto& m_spec = spec.contains("M") ? spec.at("M") : json();
        if (!m_spec.is_array() || m_spec.empty()) throw ConfigError("model.M must be a matrix");
        if (m_spec.front().is_array() && !m_spec.front().empty() &&
            m_spec.front().front().is_array()) {
            for (std::size_t k = 0; k < m_spec.size(); ++k)
                fsm.transitions.push_back(matrix_from_json(
                    m_spec.at(k), fsm.state_count, "model.M[" + std::to_string(k) + "]"));
        } else {
            fsm.transitions.push_back(matrix_from_json(m_spec, fsm.state_count, "model.M"));
        }
        const auto& g_spec = spec.contains("G") ? spec.at("G") : json();
        if (!g_spec.is_array() || g_spec.empty()) throw ConfigError("model.G must be a vector");
        if (g_spec.front().is_array()) {
            for (const auto& g : g_spec) fsm.potentials.push_back(g.get<std::vector<double>>());
        } else {
            fsm.potentials.push_back(g_spec.get<std::vector<double>>());
        }
        if (spec.contains("values")) {
            fsm.state_values = require<std::vector<double>>(spec, "values", "model");
        } else {
            fsm.state_values.resize(fsm.state_count);
            for (int i = 0; i < fsm.state_count; ++i) fsm.state_values[i] = i;
        }
        fsm.homogeneous = fsm.transitions.size() == 1 && fsm.potentials.size() == 1;
        fsm.validate();
        return fsm;
    }

    throw ConfigError("unknown model family '" + family + "'");
}

std::vector<int> int_list(const json& obj, const char* key, const std::string& where) {
    auto v = require<std::vector<int>>(obj, key, where);
    for (const int x : v)
        if (x < 0) throw ConfigError("negative entry in " + where + "." + key);
    return v;
}

}  // namespace

FiniteFunctional build_functional(const FiniteStateModel& model, int horizon,
                                  const std::string& kind, const std::string& term,
                                  bool normalized) {
    const int d = model.state_count;
    FiniteFunctional f;
    f.normalized = normalized;
    f.label = kind + "/" + term + (normalized ? "/normalized" : "");

    if (kind == "terminal-additive") f.kind = FunctionalKind::TerminalAdditive;
    else if (kind == "pairwise-additive") f.kind = FunctionalKind::PairwiseAdditive;
    else throw ConfigError("unknown functional kind '" + kind + "'");

    auto node_values = [&](const std::string& t) {
        std::vector<double> v(d, 0.0);
        if (t == "one") {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (t == "value") {
            for (int x = 0; x < d; ++x) v[x] = model.value_of(x);
        } else if (t.rfind("indicator:", 0) == 0) {
            const int k = std::stoi(t.substr(10));
            if (k < 0 || k >= d) throw ConfigError("indicator state out of range in '" + t + "'");
            v[k] = 1.0;
        } else {
            throw ConfigError("unknown functional term '" + t + "'");
        }
        return v;
    };

    if (f.kind == FunctionalKind::TerminalAdditive) {
        const auto v = node_values(term);
        f.node_terms.assign(horizon + 1, v);
        return f;
    }

    // pairwise-additive
    if (term == "pair-product" || term.rfind("transition-count:", 0) == 0) {
        f.node_terms.push_back(std::vector<double>(d, 0.0));
        Mat pair(d, d);
        if (term == "pair-product") {
            for (int u = 0; u < d; ++u)
                for (int v = 0; v < d; ++v) pair(u, v) = model.value_of(u) * model.value_of(v);
        } else {
            const auto rest = term.substr(17);
            const auto colon = rest.find(':');
            if (colon == std::string::npos)
                throw ConfigError("transition-count term needs two states, got '" + term + "'");
            const int a = std::stoi(rest.substr(0, colon));
            const int b = std::stoi(rest.substr(colon + 1));
            if (a < 0 || a >= d || b < 0 || b >= d)
                throw ConfigError("transition-count states out of range in '" + term + "'");
            pair(a, b) = 1.0;
        }
        f.pair_terms.assign(horizon, pair);
        return f;
    }
    // node-style terms lifted to pairwise form: depend on the second argument
    const auto v = node_values(term);
    f.node_terms.push_back(v);
    Mat pair(d, d);
    for (int u = 0; u < d; ++u)
        for (int w = 0; w < d; ++w) pair(u, w) = v[w];
    f.pair_terms.assign(horizon, pair);
    return f;
}

std::string resolve_fixture_path(const std::string& name) {
    namespace fs = std::filesystem;
    if (fs::exists(name)) return name;
    if (const char* dir = std::getenv("FKGEN_FIXTURES")) {
        const auto joined = fs::path(dir) / name;
        if (fs::exists(joined)) return joined.string();
    }
    throw ConfigError("fixture not found: " + name +
                      " (set FKGEN_FIXTURES or use an absolute path)");
}

namespace {

// Only inputs that influence results enter the hash; execution knobs like
// the output directory and the thread cap stay out so reruns and --threads
// variations produce byte-identical artifacts.
json semantic_spec(const Scenario& s) {
    json model{{"name", s.model.name},
               {"states", s.model.state_count},
               {"eta0", s.model.initial},
               {"values", s.model.state_values}};
    json mats = json::array();
    for (const auto& m : s.model.transitions) {
        json rows = json::array();
        for (int i = 0; i < m.rows(); ++i)
            rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
        mats.push_back(rows);
    }
    model["M"] = mats;
    model["G"] = s.model.potentials;
    json eps;
    switch (s.selection.rule) {
        case EpsilonRule::Zero: eps = "zero"; break;
        case EpsilonRule::ReciprocalSup: eps = "reciprocal-sup"; break;
        case EpsilonRule::Fixed: eps = s.selection.fixed_epsilon; break;
    }
    return json{{"model", model},
                {"N", s.particles},
                {"horizon", s.horizon},
                {"epsilon_rule", eps},
                {"functional",
                 {{"kind", s.functional_kind},
                  {"term", s.functional_term},
                  {"normalized", s.functional_normalized}}},
                {"replicates", s.replicates},
                {"seed", s.seed},
                {"estimators", s.estimators},
                {"grid_horizons", s.grid_horizons},
                {"grid_particles", s.grid_particles},
                {"hprocess_horizons", s.hprocess_horizons}};
}

}  // namespace

std::string Scenario::hash() const { return io::hash_hex(semantic_spec(*this).dump()); }

void Scenario::finalize(const std::string& kind, const std::string& term, bool normalized) {
    functional_kind = kind;
    functional_term = term;
    functional_normalized = normalized;
    functional = build_functional(model, horizon, kind, term, normalized);
    resolved = nlohmann::json{
        {"model", {{"family", "finite"}, {"name", model.name}, {"states", model.state_count}}},
        {"N", particles},
        {"horizon", horizon},
        {"functional", {{"kind", kind}, {"term", term}, {"normalized", normalized}}},
        {"replicates", replicates},
        {"seed", seed},
    };
}

Scenario parse_scenario(const json& config, const CliOverrides& overrides) {
    if (!config.is_object()) throw ConfigError("config root must be an object");
    reject_unknown_keys(config,
                        {"model", "N", "horizon", "epsilon_rule", "functional", "replicates",
                         "seed", "out", "estimators", "grid", "horizons", "threads"},
                        "config");

    Scenario s;
    s.model = model_from_json(require<json>(config, "model", "config"));

    const bool has_grid = config.contains("grid");
    if (has_grid) {
        const auto& grid = config.at("grid");
        reject_unknown_keys(grid, {"horizons", "Ns"}, "grid");
        s.grid_horizons = int_list(grid, "horizons", "grid");
        s.grid_particles = int_list(grid, "Ns", "grid");
    }

    s.particles = has_grid ? optional_or<int>(config, "N", "config", 0)
                           : require<int>(config, "N", "config");
    s.horizon = has_grid ? optional_or<int>(config, "horizon", "config", 0)
                         : require<int>(config, "horizon", "config");
    if (!has_grid && s.particles < 1) throw ConfigError("N must be >= 1");
    if (s.horizon < 0) throw ConfigError("horizon must be >= 0");
    if (s.horizon > s.model.max_horizon())
        throw ConfigError("horizon exceeds the model's per-epoch tables");

    if (config.contains("epsilon_rule")) {
        const auto& rule = config.at("epsilon_rule");
        if (rule.is_string()) {
            const auto name = rule.get<std::string>();
            if (name == "zero") s.selection.rule = EpsilonRule::Zero;
            else if (name == "reciprocal-sup") s.selection.rule = EpsilonRule::ReciprocalSup;
            else throw ConfigError("unknown epsilon_rule '" + name + "'");
        } else if (rule.is_number()) {
            s.selection.rule = EpsilonRule::Fixed;
            s.selection.fixed_epsilon = rule.get<double>();
            if (s.selection.fixed_epsilon < 0.0) throw ConfigError("fixed epsilon must be >= 0");
        } else {
            throw ConfigError("epsilon_rule must be a string or a number");
        }
    }

    std::string functional_kind = "terminal-additive";
    std::string functional_term = "value";
    bool normalized = false;
    if (config.contains("functional")) {
        const auto& fn = config.at("functional");
        reject_unknown_keys(fn, {"kind", "term", "normalized"}, "functional");
        functional_kind = optional_or<std::string>(fn, "kind", "functional", functional_kind);
        functional_term = optional_or<std::string>(fn, "term", "functional", functional_term);
        normalized = optional_or<bool>(fn, "normalized", "functional", false);
    }

    s.replicates = optional_or<int>(config, "replicates", "config", 1);
    if (s.replicates < 1) throw ConfigError("replicates must be >= 1");
    s.seed = optional_or<uint64_t>(config, "seed", "config", 0);
    s.out_dir = optional_or<std::string>(config, "out", "config", "out");
    s.threads = optional_or<int>(config, "threads", "config", 0);
    s.estimators = optional_or<std::vector<std::string>>(config, "estimators", "config",
                                                         {"smoothed", "gamma"});
    if (config.contains("horizons")) s.hprocess_horizons = int_list(config, "horizons", "config");

    if (overrides.seed) s.seed = *overrides.seed;
    if (overrides.out_dir) s.out_dir = *overrides.out_dir;
    if (overrides.threads) s.threads = *overrides.threads;

    const int max_h = has_grid && !s.grid_horizons.empty()
                          ? *std::max_element(s.grid_horizons.begin(), s.grid_horizons.end())
                          : s.horizon;
    const int max_hp = s.hprocess_horizons.empty()
                           ? max_h
                           : std::max(max_h, *std::max_element(s.hprocess_horizons.begin(),
                                                               s.hprocess_horizons.end()));
    if (max_hp > s.model.max_horizon())
        throw ConfigError("a requested horizon exceeds the model's per-epoch tables");

    s.functional_kind = functional_kind;
    s.functional_term = functional_term;
    s.functional_normalized = normalized;
    s.functional =
        build_functional(s.model, s.horizon, functional_kind, functional_term, normalized);

    // canonical resolved config: defaults filled in, overrides applied
    json resolved = config;
    resolved["N"] = s.particles;
    resolved["horizon"] = s.horizon;
    resolved["replicates"] = s.replicates;
    resolved["seed"] = s.seed;
    resolved["out"] = s.out_dir;
    resolved["threads"] = s.threads;
    resolved["estimators"] = s.estimators;
    resolved["functional"] =
        json{{"kind", functional_kind}, {"term", functional_term}, {"normalized", normalized}};
    if (s.model.name != "finite-inline" && resolved.at("model").contains("fixture"))
        resolved["model"]["fixture"] = resolve_fixture_path(
            resolved.at("model").at("fixture").get<std::string>());
    s.resolved = std::move(resolved);
    return s;
}

Scenario load_scenario(const std::string& config_path, const CliOverrides& overrides) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    json config;
    try {
        in >> config;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + config_path + ": " + e.what());
    }
    return parse_scenario(config, overrides);
}

}  // namespace fkgen
