#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tornado {

/// Exit statuses of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitRuntime = 3 };

/// Parses `args` (without the program name) and runs the subcommand:
/// gen-data, group, run, compare, sweep or diagnose. Failures print one JSON
/// line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tornado
