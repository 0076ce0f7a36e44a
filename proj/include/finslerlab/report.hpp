#pragma once

#include "finslerlab/linalg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace finslerlab {

constexpr int kReportSchema = 1;
constexpr const char* kVersion = "0.1.0";

struct CheckRecord {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    std::string relation;  // "<=", ">=", "<", ">"
    bool pass = false;
    nlohmann::json witness;  // required when failing
    nlohmann::json detail;
    nlohmann::json to_json() const;
};

// Compares value against tolerance; the witness is kept either way.
CheckRecord make_check(std::string name, double value, const std::string& relation, double tolerance,
                       nlohmann::json witness, nlohmann::json detail = nullptr);

struct Report {
    std::string command;
    nlohmann::json spec;     // echo of the inputs
    std::uint64_t seed = 0;
    std::vector<CheckRecord> checks;
    nlohmann::json results;  // command-specific payload
    nlohmann::json timing;   // wall clock; the only non-deterministic part

    bool pass() const;
    // Checks ordered by name. Throws Error on an empty check list.
    nlohmann::json to_json() const;
    // name,value,tolerance,relation,pass
    std::string checks_csv() const;
};

// Problems found in a report document; empty when it conforms to the schema.
std::vector<std::string> validate_report(const nlohmann::json& j);

// The document without its "timestamp" member.
nlohmann::json without_timestamp(nlohmann::json j);

std::string utc_timestamp();

}  // namespace finslerlab
