#include "fforge/error.hpp"

namespace fforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MalformedIndex: return "MalformedIndex";
    case ErrorCode::LandmarkOutOfBounds: return "LandmarkOutOfBounds";
    case ErrorCode::UnknownVideo: return "UnknownVideo";
    case ErrorCode::IOFailure: return "IOFailure";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::InvalidQuality: return "InvalidQuality";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::PoolExhausted: return "PoolExhausted";
    case ErrorCode::UnknownMember: return "UnknownMember";
    case ErrorCode::MissingPool: return "MissingPool";
    case ErrorCode::NoGradientCapability: return "NoGradientCapability";
    case ErrorCode::SingleClassInput: return "SingleClassInput";
    case ErrorCode::EmptyVideo: return "EmptyVideo";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

}  // namespace fforge
