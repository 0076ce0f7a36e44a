#include "finslerlab/acceptance.hpp"

#include <cstdio>
#include <cstdlib>
#include <string>

// Runs the ten acceptance criteria and prints one PASS/FAIL line each.
// Optional arguments: seed, then criterion ids.
int main(int argc, char** argv) {
    std::uint64_t seed = 42;
    if (argc > 1) seed = std::strtoull(argv[1], nullptr, 10);
    std::vector<int> ids;
    for (int i = 2; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
    if (ids.empty())
        for (const auto& c : finslerlab::acceptance_criteria()) ids.push_back(c.id);
    int failed = 0;
    double total = 0.0;
    for (int id : ids) {
        const auto r = finslerlab::run_criterion(id, seed);
        const std::string line = finslerlab::summary_line(r);
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        failed += line.rfind("PASS", 0) == 0 ? 0 : 1;
        total += r.seconds;
    }
    std::printf("%d of %zu criteria passed, %.1f s\n", static_cast<int>(ids.size()) - failed, ids.size(), total);
    return failed == 0 ? 0 : 1;
}
