#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace forge {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutDirEnv = "CLBF_FORGE_OUT";

enum ExitCode : int { kPass = 0, kUsage = 1, kVerifyFailed = 2, kInfeasible = 3 };

/// Runs one command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's contents.
std::string sha256_file(const std::string& path);

}  // namespace forge
