#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/dataset.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

// ---------------------------------------------------------------------------
// Iterative (chained-equation) imputation of numeric columns.
// ---------------------------------------------------------------------------

struct IterativeImputerOptions {
  int max_rounds = 10;
  double tol = 1e-3;  // on the max absolute change of imputed cells per round
};

struct IterativeImputerModel {
  struct Regressor {
    std::size_t target = 0;
    std::vector<std::size_t> predictors;
    Vector coef;
    double intercept = 0.0;
  };

  Vector means;
  std::vector<Regressor> regressors;  // one per column that had missing cells at fit time
  int max_rounds = 10;
  double tol = 1e-3;
  int rounds_run = 0;
  bool converged = false;

  /// Mean-initialise the missing cells, then run `rounds_run` passes of the
  /// fitted regressors over them. Observed cells are never touched.
  Matrix transform(const Matrix& X) const;
};

IterativeImputerModel fit_iterative_imputer(const Matrix& X, const IterativeImputerOptions& opts = {});

// ---------------------------------------------------------------------------
// KNN imputation of categorical / binary columns.
//
// Distances are masked Euclidean over co-observed coordinates, rescaled by
// p / #co-observed, computed on columns standardised with the reference
// statistics. Each missing cell takes the mode of the k nearest reference
// rows that observe that column; ties go to the smallest category code.
// ---------------------------------------------------------------------------

struct KnnImputerModel {
  Matrix reference;
  Vector center;
  Vector scale;
  std::vector<std::size_t> target_columns;
  std::size_t k = 5;
};

KnnImputerModel fit_knn_imputer(const Matrix& reference, std::vector<std::size_t> target_columns,
                                std::size_t k = 5);
Matrix impute_knn(const Matrix& X, const KnnImputerModel& model);

// ---------------------------------------------------------------------------
// Standard scaling (population standard deviation).
// ---------------------------------------------------------------------------

struct StandardScalerModel {
  Vector mean;
  Vector sd;
  std::vector<bool> constant;     // sd == 0; such columns map to 0
  std::vector<bool> passthrough;  // copied unchanged (binary/categorical inputs)

  std::vector<std::size_t> constant_columns() const;
};

/// `passthrough` (empty or one flag per column) marks columns left as is.
StandardScalerModel fit_scaler(const Matrix& X, std::vector<bool> passthrough = {});
Matrix apply_scaler(const StandardScalerModel& model, const Matrix& X);
Matrix inverse_scaler(const StandardScalerModel& model, const Matrix& Z);

// ---------------------------------------------------------------------------
// Lasso by cyclic coordinate descent with soft-thresholding. Minimises
// (1/2n)||y - X b - b0||^2 + alpha ||b||_1 with an unpenalised intercept.
// ---------------------------------------------------------------------------

struct LassoOptions {
  double kkt_tol = 1e-9;       // stopping target
  double kkt_accept = 1e-6;    // residual above this after max_sweeps throws NonConvergence
  int max_sweeps = 200000;
};

struct LassoFit {
  Vector beta;
  double intercept = 0.0;
  double kkt_residual = 0.0;
  int sweeps = 0;
  bool converged = false;
};

double soft_threshold(double z, double gamma);

/// Smallest alpha for which the solution is identically zero:
/// max_j |x_j^T (y - mean(y))| / n, with x_j centred.
double lasso_alpha_max(const Matrix& X, const Vector& y);

LassoFit lasso_fit(const Matrix& X, const Vector& y, double alpha, const LassoOptions& opts = {},
                   const Vector* warm_start = nullptr);

/// Max violation of the Lasso optimality conditions at (beta, intercept).
double lasso_kkt_residual(const Matrix& X, const Vector& y, const Vector& beta, double intercept, double alpha);

struct LassoRanking {
  double alpha = 0.0;
  Vector beta;
  std::vector<std::size_t> ranking;   // by |beta| descending, ties by column order
  std::vector<std::size_t> selected;  // first k of ranking
  std::vector<double> cv_alphas;
  std::vector<double> cv_mse;
  double kkt_residual = 0.0;
};

LassoRanking lasso_rank(const Matrix& X, const Labels& y, double alpha, std::size_t k,
                        const LassoOptions& opts = {});

std::vector<double> default_lasso_alpha_grid();

/// Picks alpha by stratified k-fold CV (minimum mean squared error, ties to
/// the larger alpha), then ranks at that alpha.
LassoRanking lasso_rank_cv(const Matrix& X, const Labels& y, std::size_t k, const std::vector<double>& alphas,
                           std::size_t folds, std::uint64_t seed, const LassoOptions& opts = {});

// ---------------------------------------------------------------------------
// SMOTE.
// ---------------------------------------------------------------------------

struct SmoteConfig {
  std::size_t k_neighbors = 5;
  std::uint64_t seed = 42;
};

struct SmoteSample {
  std::size_t base = 0;      // row index into the input matrix
  std::size_t neighbor = 0;  // row index into the input matrix
  double u = 0.0;
};

struct SmoteResult {
  Matrix X;  // original rows first, verbatim, then synthetic rows
  Labels y;
  std::size_t n_original = 0;
  int minority_class = 1;
  std::vector<SmoteSample> synthetic;
  std::vector<std::vector<std::size_t>> neighbors;  // per minority row (input indices), k nearest
};

/// k nearest minority neighbours (excluding self) by Euclidean distance,
/// ties broken by row index. Returned indices refer to rows of X.
std::vector<std::vector<std::size_t>> minority_neighbors(const Matrix& X, const std::vector<std::size_t>& minority,
                                                         std::size_t k);

SmoteResult smote(const Matrix& X, const Labels& y, const SmoteConfig& cfg);

/// Applies recorded interpolation steps to another representation of the
/// same rows (e.g. the unscaled matrix).
Matrix apply_smote_samples(const Matrix& X, const std::vector<SmoteSample>& samples);

// ---------------------------------------------------------------------------
// Per-split pipeline.
// ---------------------------------------------------------------------------

struct PreprocessConfig {
  bool independent_per_split = true;  // fit imputers/scaler on each split itself
  bool smote_eval_sets = true;        // also oversample internal test and external sets
  std::size_t top_k = 40;
  std::size_t knn_k = 5;
  std::size_t smote_k = 5;
  IterativeImputerOptions imputer;
  std::vector<double> lasso_alphas = default_lasso_alpha_grid();
  std::size_t lasso_folds = 5;
  std::optional<double> lasso_alpha;  // fixed alpha skips the CV
  std::uint64_t seed = 42;
};

nlohmann::json to_json(const PreprocessConfig& cfg);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);

/// Called with every matrix a preprocessing model is fitted on. Used to
/// verify which split's statistics were read.
using FitObserver = std::function<void(std::string_view stage, std::string_view split, const Matrix& fit_data)>;

struct PreparedSplit {
  std::string name;
  Matrix X;           // imputed, scaled, selected, oversampled when enabled
  Labels y;
  Matrix X_unscaled;  // same rows as X without normalisation
  std::size_t n_original = 0;       // rows before oversampling (a prefix of X)
  std::vector<std::string> ids;     // ids of the original rows
  Matrix imputed_full;              // original rows, all schema features, imputed, unscaled
  nlohmann::json report;
};

struct PreprocessOutput {
  PreparedSplit train;
  PreparedSplit internal_test;
  PreparedSplit external;
  std::vector<std::size_t> selected;  // schema column indices
  std::vector<std::string> selected_names;
  LassoRanking lasso;
  nlohmann::json pipeline;  // fitted models, versioned
  nlohmann::json report;
};

inline constexpr int kPipelineArtifactVersion = 1;

PreprocessOutput run_preprocess(const SplitBundle& bundle, const PreprocessConfig& cfg,
                                const FitObserver& observer = {});

nlohmann::json to_json(const IterativeImputerModel& m);
nlohmann::json to_json(const KnnImputerModel& m, bool include_reference = false);
nlohmann::json to_json(const StandardScalerModel& m);

}  // namespace mortpred
