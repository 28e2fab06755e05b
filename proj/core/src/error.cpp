#include "vibropsi/error.hpp"

namespace vibropsi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kNonMonotoneCurve: return "NON_MONOTONE_CURVE";
    case ErrorCode::kDegeneratePosterior: return "DEGENERATE_POSTERIOR";
    case ErrorCode::kOutOfRange: return "OUT_OF_RANGE";
    case ErrorCode::kContactTimeout: return "CONTACT_TIMEOUT";
    case ErrorCode::kNotInContact: return "NOT_IN_CONTACT";
    case ErrorCode::kSeparationFault: return "SEPARATION_FAULT";
    case ErrorCode::kConcurrentCommand: return "CONCURRENT_COMMAND";
    case ErrorCode::kApparatusUnreachable: return "APPARATUS_UNREACHABLE";
    case ErrorCode::kAlignmentFailed: return "ALIGNMENT_FAILED";
    case ErrorCode::kResponderTimeout: return "RESPONDER_TIMEOUT";
    case ErrorCode::kWrongPhase: return "WRONG_PHASE";
    case ErrorCode::kUnknownSession: return "UNKNOWN_SESSION";
    case ErrorCode::kMismatchedGrids: return "MISMATCHED_GRIDS";
    case ErrorCode::kInsufficientData: return "INSUFFICIENT_DATA";
    case ErrorCode::kIo: return "IO_ERROR";
    case ErrorCode::kProtocol: return "PROTOCOL_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace vibropsi
