#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sdtn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Stable exit-code contract.
enum Exit : int {
    kOk = 0,
    kUsage = 1,
    kDataError = 2,
    kNumerical = 3,
};

// Runs one subcommand; `args` excludes the program name. Everything the
// command prints goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdtn::cli
