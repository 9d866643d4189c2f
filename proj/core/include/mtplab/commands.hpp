#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtplab {

// Exit codes: configuration/usage problems and runtime numeric failures are
// distinguishable by code alone.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// The operator surface, callable in-process. `args` excludes the program
// name: {"pretrain", "--config", "exp.ini", "--run", "runs/a"}. Errors are
// reported on `err` and mapped to the exit codes above; nothing throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtplab
