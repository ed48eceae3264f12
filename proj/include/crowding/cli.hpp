#pragma once

// Command-line front end: synth | train | eval | sweep | ablate | augment.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace crowding {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// FNV-1a 64 of a file's bytes as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace crowding
