#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bikelab {

enum class ErrorCode {
  kParse,
  kInvalidProfile,
  kDegenerateInput,
  kInsufficientData,
  kConsistency,
  kUnparseableOutput,
  kIncompleteRatings,
  kOutOfRange,
  kNumeric,
  kAlignment,
  kBackend,
  kSchema,
  kCannotOversample,
  kConfig,
  kConstraint,
  kValidation,
  kNotFound,
  kConflict,
  kDuplicateAnnotator,
  kIo,
  kTrainingAborted,
};

std::string_view error_code_name(ErrorCode code);

/// Library-wide exception. Every failure surfaced by bikelab carries a code so
/// callers (CLI, HTTP layer) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// JSON parse failure with the byte offset reported by the parser.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t byte_offset)
      : Error(ErrorCode::kParse, message), byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

/// Input validation failure naming the offending field (maps to HTTP 422).
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(ErrorCode::kValidation, field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace bikelab
