#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gestalt {

/// Stable error categories. The CLI maps them onto exit codes.
enum class ErrorCode {
  kInvalidArgument,
  kDomain,
  kNotFound,
  kSingular,
  kInsufficientData,
  kDegenerateVariance,
  kAmbiguous,
  kUnsupported,
  kParse,
  kSchema,
  kLoad,
  kReweight,
  kFoldFailure,
  kCollapse,
  kDegenerate,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gestalt
