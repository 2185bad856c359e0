#pragma once

// The opiaid command line. run() takes the arguments after the program name
// and returns the process exit code:
//   0 ok, 1 file system failure, 2 usage error, 3 invalid input or model.

#include <ostream>
#include <string>
#include <vector>

namespace opiaid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInvalid = 3;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace opiaid::cli
