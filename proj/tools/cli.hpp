#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gridcharge::cli {

enum ExitCode { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gridcharge::cli
