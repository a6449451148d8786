#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace steproute {

enum class ErrorCode {
  AppendAfterTermination,
  MaxStepsExceeded,
  EmptyTrace,
  SteppedTerminal,
  PolicyFailure,
  ParseError,
  InvariantViolation,
  EmptyDataset,
  LengthMismatch,
  NonFiniteInput,
  NonFiniteGradient,
  InsufficientSamples,
  OutOfDomain,
  DegenerateBelief,
  SolverBudgetExceeded,
  NoSamples,
  DegenerateGap,
  Unreachable,
  EmptyCurve,
  SingleClass,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a code so callers (and the CLI
/// exit-status mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace steproute
