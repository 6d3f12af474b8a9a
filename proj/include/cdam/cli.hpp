#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cdam {

inline constexpr const char* kToolVersion = "1.0.0";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;  // verify found a failing check, or an internal error
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitModel = 4;
inline constexpr int kExitNumeric = 5;

// Runs one command line (without the program name) and returns its exit code.
// Never throws; diagnostics go to `err`, results and help text to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdam
