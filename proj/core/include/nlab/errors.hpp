#pragma once

#include <stdexcept>
#include <string>

namespace nlab {

enum class ErrorKind {
  invalid_input,
  invalid_parameter,
  shape,
  parse,
  singular_matrix,
  degenerate_row,
  diverged,
  config_validation,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Validation-class errors map to CLI exit code 1, the rest to 2.
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::invalid_parameter || kind_ == ErrorKind::config_validation;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace nlab
