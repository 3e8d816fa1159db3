#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace milpath::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

/// Runs the command line `args` (program name excluded). Normal output goes
/// to `out`, progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a of a file's bytes, as 16 lowercase hex digits.
std::string file_digest(const std::string& path);

}  // namespace milpath::cli
