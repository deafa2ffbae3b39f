#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace mortpred {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return v != v; }

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-task streams from a
// base seed so parallel work is schedule-independent.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Portable uniform draws. std::uniform_*_distribution output differs between
// standard libraries, which would break cross-platform artifact hashes.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

Matrix select_rows(const Matrix& X, const std::vector<std::size_t>& rows);
Matrix select_cols(const Matrix& X, const std::vector<std::size_t>& cols);
Labels select(const Labels& y, const std::vector<std::size_t>& rows);

/// Fold id per row. Each class is shuffled independently and dealt
/// round-robin, so every fold gets floor/ceil of each class count.
std::vector<std::size_t> stratified_folds(const Labels& y, std::size_t folds, std::uint64_t seed);

}  // namespace mortpred
