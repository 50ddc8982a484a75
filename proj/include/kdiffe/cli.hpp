#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kdiffe {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitDiverged = 3 };

/// Entry point for the `kdiffe` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kdiffe
