#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mcpmix {

/// Exit codes of every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcpmix
