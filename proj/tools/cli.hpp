#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rerand::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kValidation = 2,
  kMaxDraws = 3,
  kSingular = 4,
};

// Entry point shared by the rerand executable and the tests. args excludes
// the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rerand::cli
