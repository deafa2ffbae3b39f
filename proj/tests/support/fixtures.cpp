#include "fixtures.hpp"

#include <atomic>
#include <unistd.h>

namespace fixtures {

using namespace mortpred;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("mortpred-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

FeatureSchema small_schema() {
  FeatureSchema s;
  s.features = {
      {"age", FeatureKind::Demographic, FeatureType::Numeric, std::nullopt, "age"},
      {"sex", FeatureKind::Demographic, FeatureType::Binary, std::nullopt, "sex"},
      {"fever", FeatureKind::Symptom, FeatureType::Binary, std::nullopt, "fever"},
      {"cough", FeatureKind::Symptom, FeatureType::Binary, std::nullopt, "cough"},
      {"diabetes", FeatureKind::History, FeatureType::Binary, std::nullopt, "diabetes"},
      {"o2_sat", FeatureKind::Vital, FeatureType::Numeric, NormalRange{95, 100}, "oxygen saturation"},
      {"crp", FeatureKind::Lab, FeatureType::Numeric, NormalRange{0, 10}, "C-reactive protein"},
  };
  return s;
}

Matrix random_matrix(Rng& rng, long rows, long cols) {
  Matrix X(rows, cols);
  for (long j = 0; j < cols; ++j)
    for (long i = 0; i < rows; ++i) X(i, j) = standard_normal(rng);
  return X;
}

void blobs(Rng& rng, long n_per_class, long p, double shift, Matrix& X, Labels& y) {
  X = random_matrix(rng, 2 * n_per_class, p);
  y.assign(static_cast<std::size_t>(2 * n_per_class), 0);
  for (long i = n_per_class; i < 2 * n_per_class; ++i) {
    X.row(i).array() += shift;
    y[static_cast<std::size_t>(i)] = 1;
  }
}

}  // namespace fixtures
