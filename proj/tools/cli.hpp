#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace netfx {

/// Runs the command line with args (without the program name). Returns the
/// process exit code: 0 on success, 2 for invalid input or configuration,
/// 1 for fitting or estimation failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace netfx
