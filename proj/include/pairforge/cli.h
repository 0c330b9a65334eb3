#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pairforge {

enum ExitCode : int { kExitOk = 0, kExitDomainError = 1, kExitUsage = 2 };

struct GlobalOptions {
  int verbosity = 0;
  unsigned threads = 1;
  bool deterministic = false;
};

// Runs one command line (args excludes the program name). Domain errors are
// reported on err as a single `error: ...` line.
int Dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pairforge
