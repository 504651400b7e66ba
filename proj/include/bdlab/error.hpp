#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bdlab {

enum class ErrorCode {
  invalid_range,
  invalid_size,
  placement,
  shape,
  invalid_parameter,
  insufficient_pool,
  invalid_wrong_key,
  empty_dataset,
  split,
  label,
  protocol,
  numerical,
  training,
  mode,
  empty_eval,
  precondition,
  comparison,
  config,
  axis,
  io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_range: return "invalid-range";
    case ErrorCode::invalid_size: return "invalid-size";
    case ErrorCode::placement: return "placement";
    case ErrorCode::shape: return "shape";
    case ErrorCode::invalid_parameter: return "invalid-parameter";
    case ErrorCode::insufficient_pool: return "insufficient-pool";
    case ErrorCode::invalid_wrong_key: return "invalid-wrong-key";
    case ErrorCode::empty_dataset: return "empty-dataset";
    case ErrorCode::split: return "split";
    case ErrorCode::label: return "label";
    case ErrorCode::protocol: return "protocol";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::training: return "training";
    case ErrorCode::mode: return "mode";
    case ErrorCode::empty_eval: return "empty-eval";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::comparison: return "comparison";
    case ErrorCode::config: return "config";
    case ErrorCode::axis: return "axis";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + " error: " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // what() without the "<code> error: " prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

/// A library error re-raised by the experiment pipeline with the stage it
/// surfaced in.
class StageError : public Error {
 public:
  StageError(const Error& inner, std::string stage)
      : Error(inner.code(), "stage '" + stage + "': " + inner.message()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace bdlab
