#pragma once

#include <stdexcept>
#include <string>

namespace agfa {

// Error taxonomy shared by the library and the CLI (the CLI maps kinds to
// exit codes: usage=1, data/io=2, numeric=3).
enum class ErrorKind {
  kInvalidArgument,
  kShapeMismatch,
  kIo,
  kMalformedHeader,
  kTruncatedPayload,
  kUnsupportedVersion,
  kNumeric,
  kState,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace agfa
