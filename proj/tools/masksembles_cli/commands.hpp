#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace masksembles::cli {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitTrainingFailed = 3;

/// Runs the tool with `args` (program name excluded), writing human-readable
/// output to `out` and diagnostics to `err`. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace masksembles::cli
