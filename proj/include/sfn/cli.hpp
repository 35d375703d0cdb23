#pragma once

#include <ostream>
#include <string>

namespace sfn {

// Subcommands: run, sweep, spectrum, stability, verify-bounds.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int parse_and_dispatch(int argc, const char* const* argv);

std::string version_string();

}  // namespace sfn
