#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flowik::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kFileFormat = 3,
  kNumerical = 4,
};

/// Runs one flowik command. `args` excludes the program name. Normal output
/// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flowik::cli
