#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dynsfm {

/// Coarse failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kShapeMismatch,
  kNonFinite,
  kDegenerate,
  kInvalidArgument,
  kFormat,
  kIo,
  kConfig,
  kNumerical,
  kData,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace dynsfm
