#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

namespace qualpipe::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInputError = 2,
  kStateError = 3,
  kBackendExhausted = 4,
  kInterrupted = 130,
};

// Runs one command line (args excludes the program name). Never throws;
// errors are reported on `err` and mapped to an exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const std::atomic<bool>* stop = nullptr);

}  // namespace qualpipe::cli
