#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace primus {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Subcommands: train, eval, report, ablate, cka, capture, gradcheck.
// `args` excludes the program name. Results go to `out`; errors are written to
// `err` as one JSON line {"error": ..., "type": ...}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace primus
