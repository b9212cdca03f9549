#pragma once

// The `scrkit` command line. Each subcommand reads run files, calls one
// analysis and renders its report; writing commands hold an advisory lock
// on the run file for their duration.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 transport error,
// 4 partial completion (some questions failed during sampling).

#include <iosfwd>
#include <string>
#include <vector>

namespace scrkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitTransport = 3;
inline constexpr int kExitPartial = 4;

/// Runs one invocation; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scrkit::cli
