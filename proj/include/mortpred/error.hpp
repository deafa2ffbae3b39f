#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mortpred {

enum class ErrorCode {
  UnknownColumn,
  MissingColumn,
  TypeMismatch,
  DuplicateFeatureName,
  InvalidSchema,
  HospitalNotFound,
  ZscTooLarge,
  InvalidArgument,
  AllMissingColumn,
  EmptyReference,
  NonConvergence,
  TooFewMinority,
  SingleClassInput,
  ShapeMismatch,
  EmptyChild,
  DegenerateFold,
  LengthMismatch,
  SingleClass,
  SizeExceedsTrain,
  DegenerateSubsample,
  MissingRange,
  MissingAge,
  MissingSex,
  TransportError,
  AuthError,
  TooFewSamples,
  AllZeroAttribution,
  FeatureSetMismatch,
  CacheMiss,
  InvalidConfig,
  MissingArtifact,
  IoError,
  FormatError,
};

std::string_view to_string(ErrorCode code);

/// Every failure the library reports carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view code_name() const { return to_string(code_); }

 private:
  ErrorCode code_;
};

}  // namespace mortpred
