#include "fkgen/io.hpp"

#include <cstdio>

#include "json.hpp"

namespace fkgen::io {

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

uint64_t fnv1a64(std::string_view text) {
    uint64_t hash = 0xcbf29ce484222325ull;
    for (const unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

std::string hash_hex(std::string_view text) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

CsvWriter::CsvWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw FkError("cannot open output file: " + path);
}

void CsvWriter::comment(const std::string& text) {
    if (header_written_) throw FkError("CSV comments must precede the header");
    out_ << "# " << text << "\n";
}

void CsvWriter::header(std::span<const std::string> names) {
    if (header_written_) throw FkError("CSV header already written");
    columns_ = names.size();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out_ << ",";
        out_ << quote(names[i]);
    }
    out_ << "\n";
    header_written_ = true;
}

void CsvWriter::row(std::span<const std::string> fields) {
    if (!header_written_) throw FkError("CSV rows need a header first");
    if (fields.size() != columns_) throw FkError("CSV row width differs from header");
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << ",";
        out_ << quote(fields[i]);
    }
    out_ << "\n";
}

void CsvWriter::close() {
    out_.flush();
    if (!out_) throw FkError("failed writing output file: " + path_);
    out_.close();
}

std::string CsvWriter::quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string quoted = "\"";
    for (const char c : field) {
        if (c == '"') quoted += "\"\"";
        else quoted += c;
    }
    quoted += "\"";
    return quoted;
}

void write_history_jsonl(const CloudHistory<int>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FkError("cannot open output file: " + path);
    nlohmann::json head{{"format", "fkgen-cloud-history"}, {"version", 1}, {"state", "int"}};
    out << head.dump() << "\n";
    for (const auto& cloud : history.clouds) {
        nlohmann::json line{{"epoch", cloud.epoch},
                            {"n", cloud.size()},
                            {"positions", cloud.positions},
                            {"parents", cloud.parent_index},
                            {"log_normalizer", cloud.log_normalizer}};
        out << line.dump() << "\n";
    }
    if (!out) throw FkError("failed writing history file: " + path);
}

CloudHistory<int> read_history_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FkError("cannot open history file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FkError("empty history file: " + path);
    const auto head = nlohmann::json::parse(line);
    if (head.value("format", "") != "fkgen-cloud-history" || head.value("version", 0) != 1)
        throw FkError("unrecognized history format in " + path);
    CloudHistory<int> history;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ParticleCloud<int> cloud;
        cloud.epoch = j.at("epoch").get<int>();
        cloud.positions = j.at("positions").get<std::vector<int>>();
        cloud.parent_index = j.at("parents").get<std::vector<int32_t>>();
        cloud.log_normalizer = j.at("log_normalizer").get<double>();
        if (static_cast<int>(cloud.positions.size()) != j.at("n").get<int>())
            throw FkError("history epoch " + std::to_string(cloud.epoch) + " has wrong N");
        history.clouds.push_back(std::move(cloud));
    }
    return history;
}

void write_smoother_state(const SmootherState& state, const std::string& functional_label,
                          const std::string& path, uint64_t seed,
                          const std::string& scenario_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FkError("cannot open output file: " + path);
    nlohmann::json j{{"format", "fkgen-smoother-state"},
                     {"version", 1},
                     {"epoch", state.epoch},
                     {"functional", functional_label},
                     {"values", state.values}};
    if (!scenario_hash.empty()) {
        j["seed"] = seed;
        j["scenario"] = scenario_hash;
    }
    out << j.dump(2) << "\n";
    if (!out) throw FkError("failed writing smoother state: " + path);
}

SmootherState read_smoother_state(const std::string& path, std::string* functional_label) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FkError("cannot open smoother state file: " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "fkgen-smoother-state" || j.value("version", 0) != 1)
        throw FkError("unrecognized smoother-state format in " + path);
    SmootherState state;
    state.epoch = j.at("epoch").get<int>();
    state.values = j.at("values").get<std::vector<double>>();
    if (functional_label) *functional_label = j.at("functional").get<std::string>();
    return state;
}

}  // namespace fkgen::io
