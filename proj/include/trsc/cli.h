#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace trsc {

// Runs one CLI invocation (args exclude the program name). Returns the
// process exit code: 0 success, 1 validation/usage error, 2 I/O error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace trsc
