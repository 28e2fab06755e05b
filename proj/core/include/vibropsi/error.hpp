#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vibropsi {

enum class ErrorCode {
  kInvalidArgument,
  kNonMonotoneCurve,
  kDegeneratePosterior,
  kOutOfRange,
  kContactTimeout,
  kNotInContact,
  kSeparationFault,
  kConcurrentCommand,
  kApparatusUnreachable,
  kAlignmentFailed,
  kResponderTimeout,
  kWrongPhase,
  kUnknownSession,
  kMismatchedGrids,
  kInsufficientData,
  kIo,
  kProtocol,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// the service and CLI can map it to a status or exit code without string
/// matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vibropsi
