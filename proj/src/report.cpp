#include "finslerlab/report.hpp"

#include "finslerlab/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <sstream>

namespace finslerlab {

namespace {

bool compare(double v, const std::string& rel, double tol) {
    if (std::isnan(v)) return false;
    if (rel == "<=") return v <= tol;
    if (rel == ">=") return v >= tol;
    if (rel == "<") return v < tol;
    if (rel == ">") return v > tol;
    throw Error("unknown relation '" + rel + "'");
}

nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

}  // namespace

nlohmann::json CheckRecord::to_json() const {
    nlohmann::json j = {{"name", name},
                        {"value", number(value)},
                        {"tolerance", number(tolerance)},
                        {"relation", relation},
                        {"status", pass ? "PASS" : "FAIL"}};
    if (!witness.is_null()) j["witness"] = witness;
    if (!detail.is_null()) j["detail"] = detail;
    return j;
}

CheckRecord make_check(std::string name, double value, const std::string& relation, double tolerance,
                       nlohmann::json witness, nlohmann::json detail) {
    CheckRecord c;
    c.name = std::move(name);
    c.value = value;
    c.relation = relation;
    c.tolerance = tolerance;
    c.pass = compare(value, relation, tolerance);
    c.witness = std::move(witness);
    c.detail = std::move(detail);
    if (!c.pass && c.witness.is_null()) c.witness = {{"value", number(value)}};
    return c;
}

bool Report::pass() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
}

nlohmann::json Report::to_json() const {
    if (checks.empty()) throw Error("report for '" + command + "' has no checks");
    std::vector<CheckRecord> sorted = checks;
    std::stable_sort(sorted.begin(), sorted.end(), [](const CheckRecord& a, const CheckRecord& b) { return a.name < b.name; });
    nlohmann::json cs = nlohmann::json::array();
    int failed = 0;
    for (const auto& c : sorted) {
        cs.push_back(c.to_json());
        failed += c.pass ? 0 : 1;
    }
    nlohmann::json j;
    j["schema_version"] = kReportSchema;
    j["command"] = command;
    j["spec"] = spec;
    j["provenance"] = {{"finslerlab", kVersion},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                     std::to_string(EIGEN_MINOR_VERSION)},
                       {"compiler", __VERSION__},
                       {"seed", seed}};
    j["checks"] = cs;
    j["summary"] = {{"checks", sorted.size()}, {"failed", failed}, {"status", failed ? "FAIL" : "PASS"}};
    j["results"] = results;
    j["timestamp"] = timing;
    return j;
}

std::string Report::checks_csv() const {
    if (checks.empty()) throw Error("report for '" + command + "' has no checks");
    std::vector<CheckRecord> sorted = checks;
    std::stable_sort(sorted.begin(), sorted.end(), [](const CheckRecord& a, const CheckRecord& b) { return a.name < b.name; });
    std::ostringstream o;
    o.precision(17);
    o << "name,value,tolerance,relation,pass\n";
    for (const auto& c : sorted) o << c.name << "," << c.value << "," << c.tolerance << "," << c.relation << "," << (c.pass ? "PASS" : "FAIL") << "\n";
    return o.str();
}

std::vector<std::string> validate_report(const nlohmann::json& j) {
    std::vector<std::string> bad;
    auto need = [&](const nlohmann::json& o, const char* key, auto pred, const std::string& where) {
        if (!o.is_object() || !o.contains(key) || !pred(o[key])) {
            bad.push_back(where + key + " missing or of the wrong type");
            return false;
        }
        return true;
    };
    auto is_num = [](const nlohmann::json& v) { return v.is_number() || v.is_string(); };
    auto is_str = [](const nlohmann::json& v) { return v.is_string(); };
    auto is_obj = [](const nlohmann::json& v) { return v.is_object(); };
    if (need(j, "schema_version", [](const nlohmann::json& v) { return v.is_number_integer(); }, "") && j["schema_version"] != kReportSchema)
        bad.push_back("unsupported schema_version");
    need(j, "command", is_str, "");
    need(j, "spec", is_obj, "");
    if (need(j, "provenance", is_obj, "")) {
        need(j["provenance"], "finslerlab", is_str, "provenance.");
        need(j["provenance"], "seed", [](const nlohmann::json& v) { return v.is_number_unsigned() || v.is_number_integer(); }, "provenance.");
    }
    if (need(j, "checks", [](const nlohmann::json& v) { return v.is_array(); }, "")) {
        if (j["checks"].empty()) bad.push_back("checks is empty");
        std::string prev;
        for (std::size_t i = 0; i < j["checks"].size(); ++i) {
            const auto& c = j["checks"][i];
            const std::string w = "checks[" + std::to_string(i) + "].";
            need(c, "name", is_str, w);
            need(c, "value", is_num, w);
            need(c, "tolerance", is_num, w);
            need(c, "relation", is_str, w);
            if (need(c, "status", is_str, w)) {
                const auto s = c["status"].get<std::string>();
                if (s != "PASS" && s != "FAIL") bad.push_back(w + "status must be PASS or FAIL");
                if (s == "FAIL" && !c.contains("witness")) bad.push_back(w + "FAIL without witness");
            }
            if (c.contains("name") && c["name"].is_string()) {
                if (c["name"].get<std::string>() < prev) bad.push_back("checks are not ordered by name");
                prev = c["name"].get<std::string>();
            }
        }
    }
    if (need(j, "summary", is_obj, "")) need(j["summary"], "status", is_str, "summary.");
    if (!j.contains("results")) bad.push_back("results missing");
    if (!j.contains("timestamp")) bad.push_back("timestamp missing");
    return bad;
}

nlohmann::json without_timestamp(nlohmann::json j) {
    j.erase("timestamp");
    return j;
}

std::string utc_timestamp() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace finslerlab
