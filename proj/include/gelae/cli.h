#pragma once

#include <string>
#include <vector>

namespace gelae {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,        // bad config, schema, IO, checkpoint mismatch
  kExitEmptyOutput = 2,  // featurize produced no systems
  kExitNonFinite = 3,    // training aborted on a NaN/inf loss
};

/// Runs the command line `args` (without the program name) and returns the
/// exit code. Expected errors are reported on stderr without throwing.
int run_cli(const std::vector<std::string>& args);

}  // namespace gelae
