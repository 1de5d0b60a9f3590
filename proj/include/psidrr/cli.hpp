#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace psidrr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs the command line `args` (args[0] is the program name).
/// Errors go to `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace psidrr::cli
