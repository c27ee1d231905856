#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace karl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses argv (without the program name), dispatches one subcommand and
/// returns the exit code: 0 success, 1 usage error, 2 runtime error.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace karl
