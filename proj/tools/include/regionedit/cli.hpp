#pragma once

#include <iosfwd>

namespace regionedit::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitModelLoad = 2;
inline constexpr int kExitNoOpMask = 3;
inline constexpr int kExitDivergence = 4;

// Entry point of the region_edit tool. Normal output goes to `out`,
// diagnostics and progress to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace regionedit::cli
