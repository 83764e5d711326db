#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retlab {

enum class ErrorCode {
  invalid_argument,
  alphabet_mismatch,
  out_of_range,
  budget_exceeded,
  series_too_short,
  non_member,
  not_applicable,
  usage,
};

constexpr std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::alphabet_mismatch: return "alphabet_mismatch";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::budget_exceeded: return "budget_exceeded";
    case ErrorCode::series_too_short: return "series_too_short";
    case ErrorCode::non_member: return "non_member";
    case ErrorCode::not_applicable: return "not_applicable";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

/// Library error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Thrown when a finite series does not reach the requested tolerance.
class SeriesTooShort : public Error {
 public:
  SeriesTooShort(const std::string& message, std::size_t required_k)
      : Error(ErrorCode::series_too_short, message), required_k_(required_k) {}

  /// Lower estimate of the truncation index that would be needed.
  [[nodiscard]] std::size_t required_k() const noexcept { return required_k_; }

 private:
  std::size_t required_k_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace retlab
