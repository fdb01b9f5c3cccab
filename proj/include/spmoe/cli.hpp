#pragma once

#include <iosfwd>

namespace spmoe {

// Exit codes: 0 success, 1 runtime error, 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `spmoe` tool. Log verbosity comes from SPMOE_LOG
// (quiet, info, debug; default info).
int RunCli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace spmoe
