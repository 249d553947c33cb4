#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dialnav {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // command ran and failed (incl. validation errors)
inline constexpr int kExitUsage = 2;

/// Entry point of the `dialnav` tool. Failures print one JSON error record
/// per line on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dialnav
