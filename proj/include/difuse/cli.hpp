#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace difuse::cli {

inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeError = 2;

/// Runs one verb. `args` excludes the program name. Diagnostics and logs go to
/// `err`, regular output (print-config) to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace difuse::cli
