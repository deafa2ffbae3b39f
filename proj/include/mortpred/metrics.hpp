#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/dataset.hpp"
#include "mortpred/models.hpp"
#include "mortpred/preprocess.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

/// Positive class is die = 1.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0,0) anchor
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

struct MetricsReport {
  ConfusionMatrix cm;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;
  std::vector<RocPoint> roc;
};

/// Throws LengthMismatch, InvalidArgument (non-binary values).
ConfusionMatrix confusion(const Labels& y_true, const Labels& y_pred);
/// 0/0 ratios are reported as 0. Throws InvalidArgument for an empty matrix.
MetricsReport binary_metrics(const ConfusionMatrix& cm);
/// ROC over distinct score values (descending), trapezoidal AUC.
/// Throws SingleClass, LengthMismatch, InvalidArgument (non-finite scores).
RocCurve roc_auc(const Labels& y_true, const Vector& scores);
/// Labels from score >= threshold, plus ROC/AUC when both classes occur.
MetricsReport evaluate_scores(const Labels& y_true, const Vector& scores, double threshold);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricsReport& r, bool include_roc = false);
/// fpr,tpr,threshold
std::string roc_csv(const std::vector<RocPoint>& roc);

// ---------------------------------------------------------------------------
// Learning curve.
// ---------------------------------------------------------------------------

struct LearningCurveCell {
  std::string model;
  std::size_t size = 0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct LearningCurveResult {
  std::vector<std::size_t> sizes;
  std::vector<LearningCurveCell> cells;
  std::uint64_t seed = 0;
  std::size_t test_rows = 0;
};

inline const std::vector<std::size_t> kDefaultCurveSizes{20, 100, 200, 400, 1000, 2476};

/// Nested stratified subsamples of train: the rows for each size are a
/// prefix-closed superset of the rows for every smaller size. Throws
/// SizeExceedsTrain, DegenerateSubsample, InvalidArgument (sizes not
/// strictly increasing).
std::vector<std::vector<std::size_t>> nested_stratified_subsamples(const Labels& y,
                                                                   const std::vector<std::size_t>& sizes,
                                                                   std::uint64_t seed);

/// For each size: subsample train, run the preprocessing pipeline, fit each
/// model family (grid search when the family has several candidates) and
/// score the prepared internal test split.
LearningCurveResult learning_curve(const std::vector<Family>& families, const SplitBundle& bundle,
                                   const std::vector<std::size_t>& sizes, std::uint64_t seed,
                                   const PreprocessConfig& preprocess, std::size_t cv_folds = 5);

nlohmann::json to_json(const LearningCurveResult& r);
/// model,size,metric,value
std::string learning_curve_csv(const LearningCurveResult& r);

}  // namespace mortpred
