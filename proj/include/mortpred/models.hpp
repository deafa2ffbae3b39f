#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/types.hpp"

namespace mortpred {

enum class Family { LR, SVM, DT, KNN, RF, GBT, MLP };

std::string to_string(Family f);
Family parse_family(const std::string& s);
const std::vector<Family>& all_families();

// Hyperparameter records. Defaults are the configuration used throughout the
// comparison study.

struct LogisticParams {
  double C = 1.0;  // inverse L2 strength; the intercept is not penalised
  double tol = 1e-4;
  int max_iter = 100;
  int memory = 10;  // L-BFGS history
};

struct SvmParams {
  double C = 1.0;
  std::optional<double> gamma;  // unset: 1 / (p * Var(X))
  double tol = 1e-3;
  double cache_mb = 200.0;
  long max_iter = -1;  // -1: max(10^7, 100 n)
};

struct TreeParams {
  int max_depth = -1;  // -1: unlimited
  std::size_t min_samples_split = 2;
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0: all features
};

struct KnnParams {
  std::size_t k = 5;
};

struct ForestParams {
  std::size_t n_trees = 100;
  TreeParams tree;
  bool sqrt_features = true;
  bool bootstrap = true;
};

struct BoostParams {
  int n_rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  double base_score = 0.5;
};

struct MlpParams {
  std::vector<std::size_t> hidden = {100};
  double alpha = 1e-4;
  double learning_rate = 1e-3;
  int max_epochs = 200;
  std::size_t batch_size = 200;
  bool early_stopping = true;
  double validation_fraction = 0.1;
  int n_iter_no_change = 10;
  double tol = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

using Hyperparameters =
    std::variant<LogisticParams, SvmParams, TreeParams, KnnParams, ForestParams, BoostParams, MlpParams>;

struct ClassifierSpec {
  Family family = Family::LR;
  Hyperparameters params = LogisticParams{};
  std::uint64_t seed = 42;

  std::string label() const;  // e.g. "MLP(50,50)"
};

ClassifierSpec default_spec(Family f, std::uint64_t seed = 42);
/// The tuning grid for a family: two architectures for MLP, one spec otherwise.
std::vector<ClassifierSpec> default_grid(Family f, std::uint64_t seed = 42);
void validate(const ClassifierSpec& spec);

// ---------------------------------------------------------------------------
// Fitted parameter records.
// ---------------------------------------------------------------------------

struct Tree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf: positive-class fraction (CART) or Newton weight (boosting)
  };
  std::vector<Node> nodes;

  template <typename Row>
  double predict(const Row& x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& nd = nodes[static_cast<std::size_t>(i)];
      i = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
  int depth() const;
  std::size_t leaves() const;
};

struct LogisticModel {
  Vector weights;
  double intercept = 0.0;
};

struct SvmModel {
  Matrix support;  // support vectors, one per row
  Vector coef;     // alpha_i * y_i
  double bias = 0.0;
  double gamma = 1.0;
};

struct TreeModel {
  Tree tree;
};

struct KnnModel {
  Matrix X;
  Labels y;
  std::size_t k = 5;
};

struct ForestModel {
  std::vector<Tree> trees;
};

struct BoostModel {
  std::vector<Tree> trees;
  double base_margin = 0.0;
  double learning_rate = 0.1;
};

struct MlpModel {
  std::vector<Matrix> weights;  // layer l: fan_in x fan_out
  std::vector<Vector> biases;
};

using FittedParams =
    std::variant<LogisticModel, SvmModel, TreeModel, KnnModel, ForestModel, BoostModel, MlpModel>;

struct FitInfo {
  int iterations = 0;
  bool converged = true;
  std::optional<double> cv_accuracy;
  std::vector<double> loss_history;
  std::string warning;
};

struct TrainedModel {
  ClassifierSpec spec;
  FittedParams params;
  std::size_t n_features = 0;
  std::vector<std::string> feature_names;
  FitInfo info;
};

inline constexpr int kModelArtifactVersion = 1;

/// Throws SingleClassInput, ShapeMismatch, InvalidArgument.
TrainedModel fit(const ClassifierSpec& spec, const Matrix& X, const Labels& y,
                 std::vector<std::string> feature_names = {});

/// Higher means more likely to die. LR/GBT/MLP: probabilities; SVM: signed
/// decision values; DT/RF/KNN: positive fractions.
Vector predict_score(const TrainedModel& model, const Matrix& X);
double default_threshold(Family f);
/// label = score >= threshold.
Labels predict_label(const TrainedModel& model, const Matrix& X, std::optional<double> threshold = std::nullopt);
Labels threshold_scores(const Vector& scores, double threshold);

nlohmann::json to_json(const TrainedModel& m);
TrainedModel trained_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierSpec& s);
ClassifierSpec classifier_spec_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Family internals, exposed for direct testing.
// ---------------------------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// theta = [weights..., intercept]. Loss: mean log-loss + ||w||^2 / (2 C n).
LossGrad logistic_objective(const Vector& theta, const Matrix& X, const Labels& y, double C);
LogisticModel fit_logistic(const Matrix& X, const Labels& y, const LogisticParams& params, FitInfo* info = nullptr);

double rbf_gamma_scale(const Matrix& X);

struct SvmDiagnostics {
  Vector alpha;        // dual variables, one per training row
  Vector signed_y;     // +1 for die, -1 for survive
  double max_violation = 0.0;  // m(alpha) - M(alpha) at exit
  double C = 1.0;
  long iterations = 0;
  double gamma = 1.0;
};

SvmModel fit_svm(const Matrix& X, const Labels& y, const SvmParams& params, FitInfo* info = nullptr,
                 SvmDiagnostics* diag = nullptr);
Vector svm_decision(const SvmModel& m, const Matrix& X);

double gini_impurity(const Labels& labels);
/// Gini(node) - |L|/|N| Gini(L) - |R|/|N| Gini(R). Throws EmptyChild.
double cart_split_gain(const Labels& node, const Labels& left, const Labels& right);

/// CART with weighted samples. `weights` empty means unit weights; rows with
/// zero weight are ignored. `rng` drives per-node feature subsampling.
Tree fit_cart(const Matrix& X, const Labels& y, const std::vector<double>& weights, const TreeParams& params,
              Rng& rng);

/// row_ids (optional) fixes each row's identity for bootstrap draws, so a
/// permutation of rows with their ids yields the same forest.
ForestModel fit_forest(const Matrix& X, const Labels& y, const ForestParams& params, std::uint64_t seed,
                       const std::vector<std::uint64_t>& row_ids = {});

double newton_leaf_weight(double grad_sum, double hess_sum, double lambda);
/// Skips the two-class check so single-leaf arithmetic can be exercised.
BoostModel fit_boosted(const Matrix& X, const Labels& y, const BoostParams& params, FitInfo* info = nullptr);
Vector boosted_margin(const BoostModel& m, const Matrix& X);
double logistic_loss(const Vector& margin, const Labels& y);

/// Indices of the k nearest rows of `train` (Euclidean, ties by index).
std::vector<std::size_t> knn_neighbors(const Matrix& train, const Eigen::Ref<const Eigen::RowVectorXd>& query,
                                       std::size_t k);

std::vector<std::size_t> mlp_layer_sizes(std::size_t n_inputs, const std::vector<std::size_t>& hidden);
Vector mlp_flatten(const MlpModel& m);
MlpModel mlp_unflatten(const Vector& theta, const std::vector<std::size_t>& sizes);
/// Mean log-loss + alpha/(2n) * sum of squared weights (biases unpenalised).
LossGrad mlp_objective(const Vector& theta, const std::vector<std::size_t>& sizes, const Matrix& X,
                       const Labels& y, double alpha);
Vector mlp_forward(const MlpModel& m, const Matrix& X);
MlpModel fit_mlp(const Matrix& X, const Labels& y, const MlpParams& params, std::uint64_t seed,
                 FitInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Grid search with stratified k-fold cross-validation.
// ---------------------------------------------------------------------------

struct GridSearchResult {
  std::vector<ClassifierSpec> candidates;
  std::vector<double> mean_accuracy;
  std::vector<std::vector<double>> fold_accuracy;
  std::size_t winner = 0;
  TrainedModel model;  // winner refit on all rows
};

GridSearchResult grid_search_cv(const std::vector<ClassifierSpec>& specs, const Matrix& X, const Labels& y,
                                std::size_t folds, std::uint64_t seed,
                                const std::vector<std::string>& feature_names = {});

nlohmann::json to_json(const GridSearchResult& r);

/// Fits a family's default grid: a plain fit when it has one candidate,
/// otherwise grid_search_cv with folds capped at the minority class count.
TrainedModel fit_family(Family f, const Matrix& X, const Labels& y, std::uint64_t seed, std::size_t folds = 5,
                        const std::vector<std::string>& feature_names = {}, GridSearchResult* grid = nullptr);

}  // namespace mortpred
