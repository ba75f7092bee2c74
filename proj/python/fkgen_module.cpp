#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fkgen/finite_model.hpp"
#include "fkgen/oracle.hpp"
#include "fkgen/particle.hpp"
#include "fkgen/runner.hpp"
#include "fkgen/scenario.hpp"
#include "fkgen/smoother.hpp"
#include "fkgen/stats.hpp"

namespace py = pybind11;
using namespace fkgen;

namespace {

SelectionConfig selection_from(const std::string& rule, double fixed_epsilon) {
    SelectionConfig config;
    if (rule == "zero") {
        config.rule = EpsilonRule::Zero;
    } else if (rule == "reciprocal-sup") {
        config.rule = EpsilonRule::ReciprocalSup;
    } else if (rule == "fixed") {
        config.rule = EpsilonRule::Fixed;
        config.fixed_epsilon = fixed_epsilon;
    } else {
        throw ConfigError("unknown epsilon rule '" + rule + "'");
    }
    return config;
}

Scenario make_scenario(const FiniteStateModel& fsm, int horizon, int particles,
                       const std::string& kind, const std::string& term, bool normalized,
                       uint64_t seed, const std::string& rule, double fixed_epsilon) {
    Scenario s;
    s.model = fsm;
    s.horizon = horizon;
    s.particles = particles;
    s.seed = seed;
    s.selection = selection_from(rule, fixed_epsilon);
    s.finalize(kind, term, normalized);
    return s;
}

std::vector<std::vector<double>> matrix_rows(const Mat& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (int i = 0; i < m.rows(); ++i) rows[i].assign(m.row(i).begin(), m.row(i).end());
    return rows;
}

}  // namespace

PYBIND11_MODULE(fkgen, m) {
    m.doc() = "Backward particle smoothing for Feynman-Kac models: mean-field "
              "particle filtering, genealogical and forward-only smoothed "
              "estimators, and exact finite-state oracles.";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ModelContractError>(m, "ModelContractError");
    py::register_exception<CapExceededError>(m, "CapExceededError");

    py::class_<FiniteStateModel>(m, "FiniteStateModel")
        .def(py::init([](int states, std::vector<double> eta0,
                         std::vector<std::vector<double>> transition, std::vector<double> g,
                         std::vector<double> values) {
                 FiniteStateModel fsm;
                 fsm.name = "inline";
                 fsm.state_count = states;
                 fsm.initial = std::move(eta0);
                 Mat mt(states, states);
                 for (int i = 0; i < states; ++i)
                     for (int j = 0; j < states; ++j) mt(i, j) = transition.at(i).at(j);
                 fsm.transitions.push_back(mt);
                 fsm.potentials.push_back(std::move(g));
                 if (values.empty()) {
                     values.resize(states);
                     for (int i = 0; i < states; ++i) values[i] = i;
                 }
                 fsm.state_values = std::move(values);
                 fsm.validate();
                 return fsm;
             }),
             py::arg("states"), py::arg("eta0"), py::arg("M"), py::arg("G"),
             py::arg("values") = std::vector<double>{})
        .def_static("load", &FiniteStateModel::load, py::arg("path"))
        .def_static("iid_toy", &FiniteStateModel::iid_toy)
        .def_readonly("state_count", &FiniteStateModel::state_count)
        .def_readonly("eta0", &FiniteStateModel::initial)
        .def_readonly("values", &FiniteStateModel::state_values)
        .def_readonly("name", &FiniteStateModel::name)
        .def("validate", [](const FiniteStateModel& fsm) { fsm.validate(); })
        .def("__repr__", [](const FiniteStateModel& fsm) {
            return "<FiniteStateModel '" + fsm.name + "' d=" +
                   std::to_string(fsm.state_count) + ">";
        });

    m.def("exact_flow", [](const FiniteStateModel& fsm, int horizon) {
        const auto flow = oracle::exact_flow(fsm, horizon);
        py::dict out;
        out["gamma"] = flow.gamma;
        out["eta"] = flow.eta;
        out["normalizer"] = flow.normalizer;
        out["cross_check_error"] = flow.cross_check_error;
        return out;
    }, py::arg("model"), py::arg("horizon"));

    m.def("exact_smoothed",
          [](const FiniteStateModel& fsm, int horizon, const std::string& kind,
             const std::string& term, bool normalized) {
              return oracle::exact_smoothed_additive(
                  fsm, horizon, build_functional(fsm, horizon, kind, term, normalized));
          },
          py::arg("model"), py::arg("horizon"), py::arg("kind") = "terminal-additive",
          py::arg("term") = "value", py::arg("normalized") = false);

    m.def("clt_variance",
          [](const FiniteStateModel& fsm, int horizon, const std::string& kind,
             const std::string& term, bool normalized, const std::string& estimator) {
              const auto f = build_functional(fsm, horizon, kind, term, normalized);
              const auto which = estimator == "genealogical"
                                     ? oracle::EstimatorKind::Genealogical
                                     : oracle::EstimatorKind::Backward;
              return oracle::clt_variance(fsm, horizon, f, which);
          },
          py::arg("model"), py::arg("horizon"), py::arg("kind") = "terminal-additive",
          py::arg("term") = "value", py::arg("normalized") = false,
          py::arg("estimator") = "backward");

    m.def("h_process", [](const FiniteStateModel& fsm, double tolerance, int max_iters) {
        const auto hp = oracle::h_process(fsm, tolerance, max_iters);
        py::dict out;
        out["eigenvalue"] = hp.eigenvalue;
        out["h"] = hp.h;
        out["mu"] = hp.mu;
        out["mu_h"] = hp.mu_h;
        out["M_h"] = matrix_rows(hp.m_h);
        out["M_h_stationary"] = hp.m_h_stationary;
        out["stationary_gap"] = hp.stationary_gap;
        out["iterations"] = hp.iterations;
        return out;
    }, py::arg("model"), py::arg("tolerance") = 1e-13, py::arg("max_iters") = 200000);

    m.def("nonasymptotic_bounds",
          [](const FiniteStateModel& fsm, int horizon, int particles, int r) {
              const auto b = oracle::nonasymptotic_bounds(fsm, horizon, particles, r);
              py::dict out;
              out["a_r"] = b.a_r;
              out["m"] = b.m;
              out["mm_holds"] = b.mm_holds;
              out["delta"] = b.delta;
              out["rho"] = b.rho;
              out["alpha_h"] = b.alpha_h;
              out["b_pn"] = b.b_pn;
              out["lr_bound"] = b.lr_bound;
              out["normalized_bound"] = b.normalized_bound;
              out["mm_bound_applicable"] = b.mm_bound_applicable;
              out["mm_l2_bound"] = b.mm_l2_bound;
              out["concentration_b"] = b.concentration_b;
              return out;
          },
          py::arg("model"), py::arg("horizon"), py::arg("N"), py::arg("r") = 2);

    m.def("identity_suite",
          [](const FiniteStateModel& fsm, int horizon, uint64_t seed) {
              const auto f = build_functional(fsm, horizon, "terminal-additive", "value", false);
              const auto rep = oracle::identity_suite(fsm, horizon, f, seed);
              py::dict out;
              out["flow_error"] = rep.flow_error;
              out["duality_error"] = rep.duality_error;
              out["backward_decomposition_error"] = rep.backward_decomposition_error;
              out["arbitrary_start_error"] = rep.arbitrary_start_error;
              out["semigroup_error"] = rep.semigroup_error;
              return out;
          },
          py::arg("model"), py::arg("horizon"), py::arg("seed") = 0);

    m.def("run",
          [](const FiniteStateModel& fsm, int horizon, int particles, const std::string& kind,
             const std::string& term, bool normalized, uint64_t seed, uint32_t replicate,
             const std::string& epsilon_rule, double fixed_epsilon, bool traces) {
              const auto scenario = make_scenario(fsm, horizon, particles, kind, term, normalized,
                                                  seed, epsilon_rule, fixed_epsilon);
              RunRequest request;
              request.smoothed = true;
              request.gamma = true;
              request.genealogical = true;
              request.traces = traces;
              const auto out = run_replicate(scenario, replicate, request);
              py::dict result;
              result["smoothed"] = out.smoothed;
              result["gamma"] = out.gamma;
              result["genealogical"] = out.genealogical;
              result["log_normalizer"] = out.log_normalizer;
              if (traces) {
                  result["smoothed_trace"] = out.smoothed_trace;
                  result["genealogical_trace"] = out.genealogical_trace;
                  result["distinct_roots"] = out.distinct_roots;
              }
              return result;
          },
          py::arg("model"), py::arg("horizon"), py::arg("N"), py::arg("kind") = "terminal-additive",
          py::arg("term") = "value", py::arg("normalized") = false, py::arg("seed") = 0,
          py::arg("replicate") = 0, py::arg("epsilon_rule") = "zero",
          py::arg("fixed_epsilon") = 0.0, py::arg("traces") = false);

    m.def("run_replicates",
          [](const FiniteStateModel& fsm, int horizon, int particles,
             const std::vector<std::string>& estimators, int replicates, uint64_t seed,
             const std::string& kind, const std::string& term, bool normalized,
             const std::string& epsilon_rule, double fixed_epsilon, int threads) {
              const auto scenario = make_scenario(fsm, horizon, particles, kind, term, normalized,
                                                  seed, epsilon_rule, fixed_epsilon);
              const auto batch =
                  stats::run_replicates(scenario, estimators, replicates, seed, threads);
              py::dict out;
              for (std::size_t k = 0; k < batch.estimators.size(); ++k)
                  out[batch.estimators[k].c_str()] = batch.values[k];
              return out;
          },
          py::arg("model"), py::arg("horizon"), py::arg("N"), py::arg("estimators"),
          py::arg("replicates"), py::arg("seed") = 0, py::arg("kind") = "terminal-additive",
          py::arg("term") = "value", py::arg("normalized") = false,
          py::arg("epsilon_rule") = "zero", py::arg("fixed_epsilon") = 0.0,
          py::arg("threads") = 0);

    m.def("sample_backward_path",
          [](const FiniteStateModel& fsm, int horizon, int particles, uint64_t seed,
             uint32_t path_index) {
              const auto model = make_particle_model(fsm, horizon);
              const RunKey key{seed, 0};
              const auto history = run_filter(model, particles, SelectionConfig{}, horizon, key);
              return sample_backward_path(history, model, key, path_index);
          },
          py::arg("model"), py::arg("horizon"), py::arg("N"), py::arg("seed") = 0,
          py::arg("path_index") = 0);

    m.def("khintchine_a", &stats::khintchine_a, py::arg("r"));
}
