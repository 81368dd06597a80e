#pragma once

#include <string>
#include <vector>

namespace edfusion::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitPipeline = 3;

/// Parses argv-style arguments (args[0] is the program name) and runs the
/// selected subcommand.
int run(const std::vector<std::string>& args);

}  // namespace edfusion::cli
