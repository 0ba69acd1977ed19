#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stoneseg::cli {

enum ExitCode : int { ok = 0, usage_error = 1, data_error = 2, diverged = 3 };

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv);

}  // namespace stoneseg::cli
