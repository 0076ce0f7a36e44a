#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace finslerlab {

// Exit codes: 0 every check passed, 1 a check failed, 2 invalid input
// (arguments, scene, point outside the domain), 3 numerical failure.
constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitSpec = 2;
constexpr int kExitNumeric = 3;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace finslerlab
