#include "fkgen/finite_model.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

namespace fkgen {

const Mat& FiniteStateModel::transition(int n) const {
    if (n < 1) throw std::out_of_range("transition epoch must be >= 1");
    if (homogeneous) return transitions[0];
    if (n > static_cast<int>(transitions.size()))
        throw std::out_of_range("model has no transition matrix for epoch " + std::to_string(n));
    return transitions[static_cast<std::size_t>(n) - 1];
}

const std::vector<double>& FiniteStateModel::potential(int n) const {
    if (n < 0) throw std::out_of_range("potential epoch must be >= 0");
    if (homogeneous) return potentials[0];
    if (n >= static_cast<int>(potentials.size()))
        throw std::out_of_range("model has no potential vector for epoch " + std::to_string(n));
    return potentials[static_cast<std::size_t>(n)];
}

void FiniteStateModel::validate(double tol) const {
    const int d = state_count;
    if (d < 1) throw ModelContractError(name + ": state_count must be >= 1");
    if (static_cast<int>(initial.size()) != d)
        throw ModelContractError(name + ": eta0 length != state count");
    double mass = 0.0;
    for (const double p : initial) {
        if (p < 0.0) throw ModelContractError(name + ": eta0 has a negative entry");
        mass += p;
    }
    if (std::abs(mass - 1.0) > tol)
        throw ModelContractError(name + ": eta0 mass deviates from 1 by more than tolerance");
    if (transitions.empty() || potentials.empty())
        throw ModelContractError(name + ": needs at least one transition matrix and potential");
    for (std::size_t k = 0; k < transitions.size(); ++k) {
        const Mat& m = transitions[k];
        if (m.rows() != d || m.cols() != d)
            throw ModelContractError(name + ": transition matrix " + std::to_string(k + 1) +
                                     " is not " + std::to_string(d) + "x" + std::to_string(d));
        for (int i = 0; i < d; ++i) {
            double row = 0.0;
            for (int j = 0; j < d; ++j) {
                if (!(m(i, j) > 0.0))
                    throw ModelContractError(name + ": M entry (" + std::to_string(i) + "," +
                                             std::to_string(j) +
                                             ") not strictly positive (condition (H))");
                row += m(i, j);
            }
            if (std::abs(row - 1.0) > tol)
                throw ModelContractError(name + ": transition row " + std::to_string(i) +
                                         " does not sum to 1 within tolerance");
        }
    }
    for (std::size_t k = 0; k < potentials.size(); ++k) {
        if (static_cast<int>(potentials[k].size()) != d)
            throw ModelContractError(name + ": potential vector " + std::to_string(k) +
                                     " has wrong length");
        for (const double g : potentials[k]) {
            if (!(g > 0.0) || g > 1.0)
                throw ModelContractError(name + ": potential value " + std::to_string(g) +
                                         " outside (0,1]");
        }
    }
    if (static_cast<int>(state_values.size()) != d)
        throw ModelContractError(name + ": state_values length != state count");
}

namespace {

std::vector<double> parse_numbers(std::istringstream& line, const std::string& what) {
    std::vector<double> out;
    double x;
    while (line >> x) out.push_back(x);
    if (out.empty()) throw ConfigError("fixture: no numbers after '" + what + "'");
    return out;
}

}  // namespace

FiniteStateModel FiniteStateModel::parse(const std::string& text, const std::string& name) {
    FiniteStateModel fsm;
    fsm.name = name;
    std::istringstream in(text);
    std::string raw;
    int pending_matrix_rows = 0;
    Mat pending;
    int pending_row = 0;

    while (std::getline(in, raw)) {
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::istringstream line(raw);
        std::string tok;
        if (!(line >> tok)) continue;

        if (pending_matrix_rows > 0) {
            std::istringstream row_in(raw);
            for (int j = 0; j < fsm.state_count; ++j) {
                double v;
                if (!(row_in >> v))
                    throw ConfigError("fixture " + name + ": matrix row " +
                                      std::to_string(pending_row) + " is too short");
                pending(pending_row, j) = v;
            }
            ++pending_row;
            if (--pending_matrix_rows == 0) fsm.transitions.push_back(pending);
            continue;
        }

        if (tok == "states") {
            if (!(line >> fsm.state_count) || fsm.state_count < 1)
                throw ConfigError("fixture " + name + ": bad 'states' line");
        } else if (tok == "eta0") {
            fsm.initial = parse_numbers(line, "eta0");
        } else if (tok == "values") {
            fsm.state_values = parse_numbers(line, "values");
        } else if (tok == "G") {
            fsm.potentials.push_back(parse_numbers(line, "G"));
        } else if (tok == "M") {
            if (fsm.state_count < 1)
                throw ConfigError("fixture " + name + ": 'states' must come before 'M'");
            pending = Mat(fsm.state_count, fsm.state_count);
            pending_matrix_rows = fsm.state_count;
            pending_row = 0;
        } else {
            throw ConfigError("fixture " + name + ": unknown directive '" + tok + "'");
        }
    }
    if (pending_matrix_rows > 0)
        throw ConfigError("fixture " + name + ": truncated transition matrix");
    if (fsm.state_count < 1) throw ConfigError("fixture " + name + ": missing 'states'");
    if (fsm.initial.empty()) throw ConfigError("fixture " + name + ": missing 'eta0'");
    if (fsm.state_values.empty()) {
        fsm.state_values.resize(fsm.state_count);
        for (int i = 0; i < fsm.state_count; ++i) fsm.state_values[i] = i;
    }
    fsm.homogeneous = fsm.transitions.size() == 1 && fsm.potentials.size() == 1;
    fsm.validate();
    return fsm;
}

FiniteStateModel FiniteStateModel::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open fixture file: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    auto slash = path.find_last_of('/');
    return parse(buf.str(), slash == std::string::npos ? path : path.substr(slash + 1));
}

FiniteStateModel FiniteStateModel::iid_toy() {
    FiniteStateModel fsm;
    fsm.name = "iid-toy";
    fsm.state_count = 2;
    fsm.initial = {0.5, 0.5};
    Mat m(2, 2);
    m(0, 0) = m(0, 1) = m(1, 0) = m(1, 1) = 0.5;
    fsm.transitions.push_back(m);
    fsm.potentials.push_back({1.0, 1.0});
    fsm.state_values = {-1.0, 1.0};
    fsm.homogeneous = true;
    fsm.validate();
    return fsm;
}

FeynmanKacModel<int> make_particle_model(const FiniteStateModel& fsm, int horizon) {
    if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
    if (horizon > fsm.max_horizon())
        throw ConfigError(fsm.name + ": horizon " + std::to_string(horizon) +
                          " exceeds the model's per-epoch tables");

    struct Tables {
        FiniteStateModel fsm;
        std::vector<double> initial_cdf;
        std::vector<std::vector<double>> row_cdfs;  // one block of d cdfs per stored matrix
    };
    auto tables = std::make_shared<Tables>();
    tables->fsm = fsm;
    const int d = fsm.state_count;
    tables->initial_cdf.resize(d);
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
        acc += fsm.initial[j];
        tables->initial_cdf[j] = acc;
    }
    tables->row_cdfs.resize(fsm.transitions.size());
    for (std::size_t k = 0; k < fsm.transitions.size(); ++k) {
        auto& block = tables->row_cdfs[k];
        block.resize(static_cast<std::size_t>(d) * d);
        for (int i = 0; i < d; ++i) {
            double c = 0.0;
            for (int j = 0; j < d; ++j) {
                c += fsm.transitions[k](i, j);
                block[static_cast<std::size_t>(i) * d + j] = c;
            }
        }
    }

    FeynmanKacModel<int> model;
    model.horizon = horizon;
    model.initial_sampler = [tables, d](RngStream& rng) {
        return categorical_pick({tables->initial_cdf.data(), static_cast<std::size_t>(d)},
                                rng.next_double());
    };
    model.mutation_sampler = [tables, d](int n, const int& x, RngStream& rng) {
        const std::size_t block = tables->fsm.homogeneous ? 0 : static_cast<std::size_t>(n) - 1;
        const double* cdf = tables->row_cdfs[block].data() + static_cast<std::size_t>(x) * d;
        return categorical_pick({cdf, static_cast<std::size_t>(d)}, rng.next_double());
    };
    model.transition_density = [tables](int n, const int& x, const int& y) {
        return tables->fsm.transition(n)(x, y);
    };
    model.potential = [tables](int n, const int& x) { return tables->fsm.potential(n)[x]; };
    return model;
}

}  // namespace fkgen
