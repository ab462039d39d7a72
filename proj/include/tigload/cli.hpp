#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tigload {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitRemote = 4;

// Runs one invocation of the `tigload` tool. `args` excludes the program
// name. Reports go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tigload
