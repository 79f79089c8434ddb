#pragma once

// compass train | eval | ablate | plot. Exit codes: 0 success, 1 runtime
// error, 2 configuration or usage error.

#include <iosfwd>
#include <string>
#include <vector>

#include "compass/config.hpp"

namespace compass::cli {

inline constexpr const char* kVersion = "0.1.0";

/// "# compass <version> config=<hash>", the first line of every CSV output.
std::string metadata_line(const RunConfig& cfg);

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace compass::cli
