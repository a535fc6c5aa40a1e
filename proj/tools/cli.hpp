#pragma once

// protonc command line: convert | synth | train | eval | nc | plot.

#include <ostream>
#include <string>
#include <vector>

namespace protonc::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numerical = 3 };

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protonc::cli
