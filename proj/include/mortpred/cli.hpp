#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/explain.hpp"
#include "mortpred/llm.hpp"
#include "mortpred/metrics.hpp"
#include "mortpred/models.hpp"
#include "mortpred/preprocess.hpp"
#include "mortpred/synth.hpp"

namespace mortpred::cli {

/// Everything a pipeline run depends on. Relative paths resolve against
/// base_dir (the config file's directory). The global seed drives every
/// stage: synthesis, splits, preprocessing, models, curves and SHAP.
struct RunConfig {
  std::filesystem::path base_dir = ".";
  std::string output = "run";
  std::uint64_t seed = 42;

  // Empty: use the synth command's outputs inside the output dir.
  std::string data_csv;
  std::string schema_file;
  std::string truth_file;

  SynthConfig synth;

  std::optional<std::string> external_hospital;  // default: the schema file's value
  double test_fraction = 0.2;
  std::size_t zsc_size = 600;
  bool drop_duplicate_features = true;

  PreprocessConfig preprocess;

  std::vector<Family> models = all_families();
  std::size_t cv_folds = 5;

  std::vector<std::size_t> curve_sizes = kDefaultCurveSizes;
  std::vector<Family> curve_models = all_families();

  bool llm_enabled = false;  // whether `all` runs the zsc step
  ChatEndpointConfig endpoint;
  PromptVariant prompt_variant = PromptVariant::Improved;
  EscalationPolicy escalation;
  FailedPolicy failed_policy = FailedPolicy::CountIncorrect;
  bool record_latency = false;

  std::vector<Family> shap_models{Family::LR, Family::DT, Family::RF, Family::GBT, Family::MLP};
  std::size_t shap_rows = 50;
  std::size_t shap_background = 100;
  std::size_t shap_samples = 2048;
  ShapMode shap_mode = ShapMode::Auto;
  std::string shap_explainer = "own";  // "own" or "surrogate-gbt"
  bool shap_llm = false;
  std::size_t shap_llm_features = 12;
  std::size_t shap_llm_rows = 10;
  bool shap_llm_cache_only = false;
};

/// Unknown keys are rejected. Throws InvalidConfig.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);
/// Effective configuration with defaults filled in.
nlohmann::json to_json(const RunConfig& c);
/// sha256 of the effective configuration without the output location.
std::string config_hash(const RunConfig& c);

const std::vector<std::string>& command_names();

/// Runs one pipeline command ("all" runs every step in order). Throws
/// mortpred::Error; MissingArtifact when an upstream output is absent.
void run_command(const std::string& name, const RunConfig& config, std::ostream& log);

/// Command-line entry. Errors go to `err` as one JSON object per line and
/// yield a nonzero status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mortpred::cli
