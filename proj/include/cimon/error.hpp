#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cimon {

enum class ErrorCode {
  // ingest
  MalformedHeader,
  ShapeMismatch,
  NonFiniteValue,
  ZeroRow,
  DuplicateId,
  DegenerateAugmentation,
  InvalidArgument,
  Io,
  // simgraph
  EigenFailure,
  DegenerateAffinity,
  InsufficientPairs,
  // hashnet
  NonFiniteActivation,
  CacheMismatch,
  // losses
  IndexOutOfRange,
  BatchTooSmall,
  ZeroCodeRow,
  // trainer
  NonFiniteLoss,
  // evalkit
  CodeLengthMismatch,
  EmptyDatabase,
  GridOutOfRange,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DegenerateAugmentation: return "DegenerateAugmentation";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EigenFailure: return "EigenFailure";
    case ErrorCode::DegenerateAffinity: return "DegenerateAffinity";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::CacheMismatch: return "CacheMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::ZeroCodeRow: return "ZeroCodeRow";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::CodeLengthMismatch: return "CodeLengthMismatch";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::GridOutOfRange: return "GridOutOfRange";
  }
  return "Unknown";
}

/// Validation errors are caused by bad inputs; everything else is a runtime
/// failure. The CLI maps the two groups to different exit codes.
constexpr bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::EigenFailure:
    case ErrorCode::NonFiniteActivation:
    case ErrorCode::NonFiniteLoss:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(format(code, what, index)), code_(code), index_(index) {}

  ErrorCode code() const noexcept { return code_; }

  /// Offending record (row, item, batch...) when the failure has one.
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  static std::string format(ErrorCode code, const std::string& what,
                            std::optional<std::size_t> index) {
    std::string msg(to_string(code));
    if (index) msg += "(" + std::to_string(*index) + ")";
    if (!what.empty()) msg += ": " + what;
    return msg;
  }

  ErrorCode code_;
  std::optional<std::size_t> index_;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw Error(ErrorCode::InvalidArgument, what);
}

}  // namespace cimon
