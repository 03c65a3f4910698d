#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace slowfast::cli {

/// Runs the command line `args` (without the program name) and returns the process exit code.
/// Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace slowfast::cli
