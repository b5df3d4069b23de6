#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gtt {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `gtt` tool; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// GTT_OUTPUT_ROOT when set, otherwise "runs".
std::string output_root();

}  // namespace gtt
