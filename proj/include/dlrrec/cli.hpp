#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dlrrec::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsage = 2;
inline constexpr int kNumeric = 3;

// Subcommands: synth, swing, train, eval, report, gradcheck.
// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace dlrrec::cli
