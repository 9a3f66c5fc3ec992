// Command-line surface. All logic lives in the library; main() is a thin
// wrapper so tests can drive subcommands in-process.
#pragma once

#include <string>
#include <vector>

namespace segan::cli_io {

// Exit codes: 0 success, 1 usage error, 2 validation failure, 3 divergence.
int cli(const std::vector<std::string>& args);
int cli(int argc, const char* const* argv);

}  // namespace segan::cli_io
