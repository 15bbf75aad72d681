#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fme::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kNotConverged = 3,
};

/// Runs one command line. `args` excludes the program name. Results go to
/// `out`, the resolved configuration and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fme::cli
