#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mmet {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs one `mmet` command. `args` excludes the program name. Output files go
/// under the run directory (--out, else $MMET_OUTPUT_ROOT/<command>, else
/// runs/<command>).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmet
