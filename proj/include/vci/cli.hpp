#pragma once

// Command-line front end with one subcommand per pipeline stage.

#include <ostream>

namespace vci {

/// Returns the process exit code: 0 on success, 1 for a library error
/// (printed with its error code), 2 for bad arguments or configuration.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vci
