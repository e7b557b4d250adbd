#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace evidexr::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;  // a module reported an error
inline constexpr int kUsage = 2;    // unknown subcommand or bad flags

/// Runs one subcommand. argv[0] is the program name. Normal output goes to
/// `out`; diagnostics and the single-line error go to `err`.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace evidexr::cli
