#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lsjm {

/// Runs the command line; args excludes the program name. Returns the exit code:
/// 0 success, 1 input or runtime error, 2 fit finished without converging.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lsjm
