#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fforge {

enum class ErrorCode {
  NonFiniteInput,
  ShapeMismatch,
  EmptyDataset,
  MalformedIndex,
  LandmarkOutOfBounds,
  UnknownVideo,
  IOFailure,
  InvalidParams,
  InvalidQuality,
  DivergedTraining,
  PoolExhausted,
  UnknownMember,
  MissingPool,
  NoGradientCapability,
  SingleClassInput,
  EmptyVideo,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

// All library failures surface as this exception; the code identifies the
// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fforge
