#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mgnli::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Parses and runs one command: train, predict, evaluate, ablate, synth or
// pairgen. args excludes the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mgnli::cli
