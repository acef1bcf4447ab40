#include "agfa/error.hpp"

namespace agfa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kMalformedHeader: return "malformed header";
    case ErrorKind::kTruncatedPayload: return "truncated payload";
    case ErrorKind::kUnsupportedVersion: return "unsupported version";
    case ErrorKind::kNumeric: return "numeric failure";
    case ErrorKind::kState: return "invalid state";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace agfa
