#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace getam {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // bad flags, config, inputs, or a failed check
inline constexpr int kExitInternal = 2;

/// Entry point of the `getam` tool; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace getam
