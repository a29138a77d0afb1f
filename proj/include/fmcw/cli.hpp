#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fmcw::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;   // bad config file, flag or usage
inline constexpr int kExitData = 3;     // missing or malformed dataset, checkpoint or labels
inline constexpr int kExitRuntime = 4;

/// Runs one command line; `args` excludes the program name. Normal output goes
/// to `out`, diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmcw::cli
