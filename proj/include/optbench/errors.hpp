#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace optbench {

/// Every failure raised by the library carries one of these codes so callers
/// (CLI, service, bench harness) can map it to exit codes or HTTP statuses.
enum class ErrorCode {
  UnresolvedColumn,
  ArityMismatch,
  TypeMismatch,
  ParseError,
  ValidationError,
  ShapeMismatch,
  UnknownModel,
  NonFiniteInput,
  UnknownTable,
  EmptySample,
  NonNumericFeature,
  RewriteProducedInvalidPlan,
  NotApplicable,
  UnsupportedConvConfig,
  DuplicateName,
  UnknownAction,
  UnknownStatistic,
  UnknownOptimizer,
  MissingStats,
  TypeError,
  DivergentSchema,
  SchemaMismatch,
  UnknownQuery,
  InvalidSpec,
  OptimizerFailed,
  IoError,
  Internal,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(message),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  /// Location or other structured context, e.g. a JSON pointer into a document.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string message_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message, std::string detail = {}) {
  throw Error(code, message, std::move(detail));
}

}  // namespace optbench
