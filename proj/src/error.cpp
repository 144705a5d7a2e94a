#include "dext/error.hpp"

namespace dext {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SeedNotOnTape: return "SeedNotOnTape";
    case ErrorCode::InputSizeMismatch: return "InputSizeMismatch";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::EmptyMap: return "EmptyMap";
    case ErrorCode::DegenerateSpread: return "DegenerateSpread";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::EmptyLedger: return "EmptyLedger";
    case ErrorCode::UnknownOption: return "UnknownOption";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Format: return "Format";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace dext
