#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fkgen/errors.hpp"
#include "fkgen/particle.hpp"
#include "fkgen/smoother.hpp"

namespace fkgen::io {

// Shortest round-trip decimal representation ("%.17g", C locale).
std::string format_double(double x);

uint64_t fnv1a64(std::string_view text);
std::string hash_hex(std::string_view text);

// RFC-4180-style CSV: header row mandatory, '.' decimal separator, UTF-8,
// LF line endings. Leading '#' comment lines carry run provenance.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path);

    void comment(const std::string& text);
    void header(std::span<const std::string> names);
    void row(std::span<const std::string> fields);
    void close();

    static std::string quote(const std::string& field);

private:
    std::ofstream out_;
    bool header_written_ = false;
    std::size_t columns_ = 0;
    std::string path_;
};

// JSON-lines serialization of a particle history over int states (format
// "fkgen-cloud-history" v1): one header line, then one line per epoch with
// N, positions, parent indices and the log normalizer.
void write_history_jsonl(const CloudHistory<int>& history, const std::string& path);
CloudHistory<int> read_history_jsonl(const std::string& path);

// SmootherState snapshot (format "fkgen-smoother-state" v1), for
// checkpoint/resume of streaming runs alongside a history file. Seed and
// scenario hash ride along as provenance fields when provided.
void write_smoother_state(const SmootherState& state, const std::string& functional_label,
                          const std::string& path, uint64_t seed = 0,
                          const std::string& scenario_hash = "");
SmootherState read_smoother_state(const std::string& path, std::string* functional_label = nullptr);

}  // namespace fkgen::io
