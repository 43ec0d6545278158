#include "sbthermo/error.hpp"

namespace sbthermo {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kResourceLimit: return "resource limit";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kQMismatch: return "sideband count mismatch";
    case ErrorCode::kFitFailure: return "fit failure";
    case ErrorCode::kIo: return "i/o error";
  }
  return "unknown error";
}

}  // namespace sbthermo
