#pragma once

#include <string>
#include <vector>

namespace gfssm {

// Experiment harness entry point. `args` excludes the program name.
// Exit codes: 0 success, 1 property violation, 2 usage or configuration
// error.
int run_cli(std::vector<std::string> args);

}  // namespace gfssm
