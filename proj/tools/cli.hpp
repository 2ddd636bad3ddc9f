#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynst::cli {

enum ExitCode : int { ok = 0, failure = 1, usage = 2 };

// Parses `args` (without the program name) and runs one subcommand.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dynst::cli
