#pragma once

#include <iosfwd>

namespace mfbd::cli {

enum ExitCode : int {
  ok = 0,
  runtime_failure = 1,
  invalid_input = 2,
  not_converged = 3,
};

/// Entry point of the mfbd tool. Data goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mfbd::cli
