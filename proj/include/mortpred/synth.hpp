#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/dataset.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

struct SynthConfig {
  std::size_t n = 9000;
  std::size_t p_numeric = 23;  // includes age
  std::size_t p_binary = 53;   // includes sex
  std::size_t informative = 40;
  double coefficient_scale = 1.0;
  double missing_rate = 0.05;  // per cell, age and sex exempt
  double minority_fraction = 0.25;
  std::size_t hospitals = 4;
  std::uint64_t seed = 42;
};

/// Throws InvalidConfig.
void validate(const SynthConfig& c);
nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

enum class EffectShape { Hinge, Step, Linear };

/// One term of the true log-odds. Numeric effects act on the latent standard
/// normal z behind the observed value: hinge = max(0, sign*z - t), step =
/// [sign*z > t]. Binary effects are linear in the 0/1 value. An interaction
/// multiplies two binaries.
struct SynthEffect {
  std::string feature;
  std::string partner;  // interactions only
  EffectShape shape = EffectShape::Linear;
  double sign = 1.0;
  double threshold = 0.0;
  double beta = 0.0;
};

struct SynthResult {
  Dataset dataset;
  Vector bayes_prob;  // true P(die | latent features) per row
  double intercept = 0.0;
  std::vector<SynthEffect> effects;
  std::vector<std::string> informative;
  SynthConfig config;
};

/// Deterministic in the config. Labels are Bernoulli draws from the true
/// probabilities; the intercept is solved so the mean probability equals
/// minority_fraction. Hospitals H1..Hk are assigned round-robin.
SynthResult generate(const SynthConfig& config);

nlohmann::json truth_json(const SynthResult& r);

/// data.csv, schema.json (external hospital = last one) and truth.json.
void write_synth(const SynthResult& r, const std::filesystem::path& dir);

/// Bayes scores for the rows of `ds` looked up by id in a truth.json document.
Vector bayes_scores_for(const nlohmann::json& truth, const std::vector<std::string>& ids);

}  // namespace mortpred
