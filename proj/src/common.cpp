#include <cmath>

#include "mortpred/error.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::TypeMismatch: return "TypeMismatch";
    case ErrorCode::DuplicateFeatureName: return "DuplicateFeatureName";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::HospitalNotFound: return "HospitalNotFound";
    case ErrorCode::ZscTooLarge: return "ZscTooLarge";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::AllMissingColumn: return "AllMissingColumn";
    case ErrorCode::EmptyReference: return "EmptyReference";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::TooFewMinority: return "TooFewMinority";
    case ErrorCode::SingleClassInput: return "SingleClassInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyChild: return "EmptyChild";
    case ErrorCode::DegenerateFold: return "DegenerateFold";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::SizeExceedsTrain: return "SizeExceedsTrain";
    case ErrorCode::DegenerateSubsample: return "DegenerateSubsample";
    case ErrorCode::MissingRange: return "MissingRange";
    case ErrorCode::MissingAge: return "MissingAge";
    case ErrorCode::MissingSex: return "MissingSex";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::AllZeroAttribution: return "AllZeroAttribution";
    case ErrorCode::FeatureSetMismatch: return "FeatureSetMismatch";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

double standard_normal(Rng& rng) {
  // Box-Muller; u1 is kept away from zero.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Matrix select_rows(const Matrix& X, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Matrix select_cols(const Matrix& X, const std::vector<std::size_t>& cols) {
  Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
  }
  return out;
}

Labels select(const Labels& y, const std::vector<std::size_t>& rows) {
  Labels out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(y[r]);
  return out;
}

std::vector<std::size_t> stratified_folds(const Labels& y, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> assignment(y.size(), 0);
  Rng rng(seed);
  std::size_t dealt = 0;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == cls) idx.push_back(i);
    }
    shuffle(idx, rng);
    for (auto i : idx) assignment[i] = dealt++ % folds;
  }
  return assignment;
}

}  // namespace mortpred
