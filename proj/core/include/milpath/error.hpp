#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace milpath {

/// Failure category. The command-line tool maps these onto exit codes.
enum class ErrorKind {
  kIo,          // unreadable or unwritable path
  kFormat,      // bad magic, unsupported version or depth
  kCorruption,  // well-formed header, inconsistent payload
  kValidation,  // violated precondition or invariant
  kUndefined,   // metric or statistic undefined for the given input
  kNumeric,     // non-finite values during optimization
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::kValidation, message);
}

}  // namespace milpath
