#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dext {

enum class ErrorCode {
  ShapeMismatch,
  SeedNotOnTape,
  InputSizeMismatch,
  TargetUnreachable,
  EmptyMap,
  DegenerateSpread,
  CountMismatch,
  GridMismatch,
  MissingCell,
  UnknownMethod,
  EmptyLedger,
  UnknownOption,
  InvalidArgument,
  Format,
  Io,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library surfaces as this exception; the
// code lets the CLI and HTTP layers map failures to exit/status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dext
