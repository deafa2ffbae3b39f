#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mortpred/dataset.hpp"
#include "mortpred/types.hpp"

namespace fixtures {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// age, sex, fever, cough, diabetes, o2_sat [95,100], crp [0,10].
mortpred::FeatureSchema small_schema();

mortpred::Matrix random_matrix(mortpred::Rng& rng, long rows, long cols);

/// Two Gaussian blobs; label 1 centred at +shift on every coordinate.
void blobs(mortpred::Rng& rng, long n_per_class, long p, double shift, mortpred::Matrix& X, mortpred::Labels& y);

}  // namespace fixtures
