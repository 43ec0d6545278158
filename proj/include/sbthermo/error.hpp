#pragma once

#include <stdexcept>
#include <string>

namespace sbthermo {

enum class ErrorCode {
  kInvalidInput,
  kResourceLimit,
  kFormat,
  kQMismatch,
  kFitFailure,
  kIo,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sbthermo
