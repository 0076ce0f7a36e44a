#pragma once

#include "finslerlab/report.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace finslerlab {

struct Criterion {
    int id = 0;
    std::string name;   // check name, ordered by id
    std::string title;
    double budget_seconds = 0.0;
};

const std::vector<Criterion>& acceptance_criteria();

struct CriterionResult {
    Criterion criterion;
    CheckRecord check;  // value = number of failed parts; detail lists the parts
    double seconds = 0.0;
};

// Runs one criterion; randomness derives from `seed` by the criterion name.
CriterionResult run_criterion(int id, std::uint64_t seed);

// "PASS  3  title  (parts) 1.2 s / 60 s"
std::string summary_line(const CriterionResult& r);

}  // namespace finslerlab
