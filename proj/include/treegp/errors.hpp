#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace treegp {

// All toolkit failures carry a stable code string; the CLI reports them on
// stderr as "ERROR <code>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const char* code, const std::string& message) {
  throw Error(code, message);
}

namespace codes {
inline constexpr const char* kUnbalancedBrackets = "UnbalancedBrackets";
inline constexpr const char* kEmptyTree = "EmptyTree";
inline constexpr const char* kNodeWithoutLabel = "NodeWithoutLabel";
inline constexpr const char* kNodeWithoutChildren = "NodeWithoutChildren";
inline constexpr const char* kExpectedBracket = "ExpectedBracket";
inline constexpr const char* kTrailingContent = "TrailingContent";
inline constexpr const char* kMismatchedSymbolTables = "MismatchedSymbolTables";
inline constexpr const char* kUnknownSymbol = "UnknownSymbol";
inline constexpr const char* kDegenerateSelfKernel = "DegenerateSelfKernel";
inline constexpr const char* kDimensionMismatch = "DimensionMismatch";
inline constexpr const char* kNotPositiveDefinite = "NotPositiveDefinite";
inline constexpr const char* kTooLarge = "TooLarge";
inline constexpr const char* kLengthMismatch = "LengthMismatch";
inline constexpr const char* kConstantVector = "ConstantVector";
inline constexpr const char* kAllRestartsFailed = "AllRestartsFailed";
inline constexpr const char* kConfig = "Config";
inline constexpr const char* kIo = "Io";
}  // namespace codes

}  // namespace treegp
