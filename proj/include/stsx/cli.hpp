#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stsx {

/// Runs the command line `args` (without the program name). Failures are
/// reported on `err` as one line "error: <kind>: <message>"; the return value
/// is the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stsx
