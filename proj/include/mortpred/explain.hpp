#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/llm.hpp"
#include "mortpred/models.hpp"
#include "mortpred/narrative.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

/// Scores every row of a matrix. Must be safe to call concurrently unless
/// the caller asks for serial explanation.
using BatchScoreFn = std::function<Vector(const Matrix&)>;

enum class ShapMode { Auto, Exhaustive, Sampled };

struct KernelShapConfig {
  ShapMode mode = ShapMode::Auto;  // Auto: exhaustive when 2^p - 2 <= n_samples
  std::size_t n_samples = 2048;    // coalitions evaluated in sampled mode
  std::uint64_t seed = 42;
};

struct ShapRow {
  Vector phi;
  double base = 0.0;   // mean score over the background
  double fx = 0.0;     // score of the explained row
};

/// KernelSHAP: Shapley-kernel weighted least squares over coalitions, with
/// the efficiency constraint sum(phi) = f(x) - base imposed exactly. A masked
/// feature takes its value from each background row in turn and the
/// coalition value is the mean score. Throws TooFewSamples, InvalidArgument.
ShapRow kernel_shap(const BatchScoreFn& f, const Eigen::Ref<const Eigen::RowVectorXd>& x, const Matrix& background,
                    const KernelShapConfig& config = {});

/// Shapley kernel weight for a coalition of size s out of p.
double shapley_kernel_weight(std::size_t p, std::size_t s);

struct ShapMatrix {
  Matrix phi;  // n x p
  double base = 0.0;
  Vector fx;   // n
  std::vector<std::string> feature_names;
  std::vector<std::string> ids;
  std::string model;
};

/// Explains each row of X. Each row's sampling seed mixes config.seed with a
/// hash of the row, so identical rows get identical attributions.
/// `serial` forces one thread (required for live endpoints).
ShapMatrix explain_rows(const BatchScoreFn& f, const Matrix& X, const Matrix& background,
                        const KernelShapConfig& config, bool serial = false);

/// `size` rows drawn without replacement from X using `seed`; all of X when smaller.
Matrix sample_background(const Matrix& X, std::size_t size, std::uint64_t seed);

struct ImpactSummary {
  std::string model;
  std::vector<std::string> features;
  std::vector<double> mean_abs;
  std::vector<double> std_abs;  // population standard deviation of |phi|
  std::vector<double> impact_pct;
  std::string warning;          // "AllZeroAttribution" when every |phi| is zero
};

/// impact_pct_j = 100 * mean_i|phi_ij| / sum_k mean_i|phi_ik|. All-zero input
/// yields uniform percentages with warning set rather than throwing.
ImpactSummary impact_percentages(const ShapMatrix& shap);

struct AggregateImpact {
  std::string group;
  std::vector<std::string> features;
  std::vector<double> mean_abs;      // averaged across summaries
  std::vector<double> impact_pct;
  std::vector<double> adjusted_std;  // avg std * impact_pct / avg mean
  std::vector<std::string> models;
};

/// Averages mean|phi| first, then converts to percentages. Summaries are
/// aligned by feature name. Throws FeatureSetMismatch, InvalidArgument.
AggregateImpact aggregate_impacts(const std::vector<ImpactSummary>& summaries, const std::string& group);

/// Long format "feature,shap,value,instance"; features by mean|phi|
/// descending, rows in instance order within a feature. Throws ShapeMismatch.
std::string violin_csv(const ShapMatrix& shap, const Matrix& X);

std::string impact_csv(const ImpactSummary& s);
std::string impact_csv(const AggregateImpact& a);
nlohmann::json to_json(const ImpactSummary& s);
nlohmann::json to_json(const AggregateImpact& a);
nlohmann::json to_json(const ShapMatrix& s);
ShapMatrix shap_matrix_from_json(const nlohmann::json& j);
ImpactSummary impact_summary_from_json(const nlohmann::json& j);

/// Model score as a batch function.
BatchScoreFn model_scorer(const TrainedModel& model);

/// The surrogate ("explainer model") mode: a boosted-tree model trained to
/// reproduce another model's predicted labels on X.
TrainedModel fit_surrogate_gbt(const TrainedModel& target, const Matrix& X, std::uint64_t seed);

/// Reference row for narrative-space explanations: binaries 0, ranged
/// numerics at the midpoint of their range, other numerics at the column
/// median of X. Age and sex take the median and the mode.
Eigen::RowVectorXd narrative_baseline(const Matrix& X, const FeatureSchema& schema);

/// Scores rows (in schema columns) by rendering a narrative and asking the
/// LLM: die = 1, survive = 0, failed = 0.5. Answers are cached by a hash of
/// model name and narrative. Without a client, a miss throws CacheMiss.
class LlmNarrativeScorer {
 public:
  LlmNarrativeScorer(FeatureSchema schema, std::string model_name, ChatClient* client, EscalationPolicy policy = {},
                     SamplingParams sampling = {});

  Vector operator()(const Matrix& rows);
  double score_narrative(const std::string& narrative);

  void load_cache(const std::filesystem::path& path);
  void save_cache(const std::filesystem::path& path) const;
  std::size_t cache_size() const;
  std::size_t queries() const { return queries_; }
  std::string cache_key(const std::string& narrative) const;

 private:
  FeatureSchema schema_;
  std::string model_name_;
  ChatClient* client_;
  EscalationPolicy policy_;
  SamplingParams sampling_;
  mutable std::mutex mu_;
  std::map<std::string, std::pair<std::string, ZscLabel>> cache_;  // key -> (narrative, label)
  std::size_t queries_ = 0;
};

}  // namespace mortpred
