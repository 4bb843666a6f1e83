#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace elastreg {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumerical = 4 };

/// Runs the command line `args` (without the program name). Summaries go to
/// `out`, diagnostics to `err`; nothing is thrown.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace elastreg
