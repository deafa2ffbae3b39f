#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/dataset.hpp"
#include "mortpred/types.hpp"

namespace mortpred {

enum class LabBand { Below, Within, Above };
std::string to_string(LabBand b);

struct LabClassification {
  std::string feature;
  LabBand band = LabBand::Within;
};

/// Inclusive bounds: lo and hi themselves are within range.
LabBand classify_lab(double value, const NormalRange& range);
/// Throws MissingRange when the feature has no configured range.
LabClassification classify_lab(const FeatureSpec& spec, double value);

struct NarrativeItem {
  std::string feature;
  std::string status;  // "positive", "above", "below", or the stated value for age/sex
};

struct PatientNarrative {
  std::string text;
  std::vector<NarrativeItem> included;
  std::vector<std::string> omitted;  // negatives, within-range, missing, unranged numerics
};

/// Sentence order: age, sex, symptoms, history, treatments, other positive
/// binaries and categoricals, then out-of-range measurements grouped by band.
/// Missing cells are omitted. Throws MissingAge, MissingSex.
PatientNarrative render_narrative(const Eigen::Ref<const Eigen::RowVectorXd>& row, const FeatureSchema& schema);

enum class PromptVariant { Raw, Improved, Strict };
std::string to_string(PromptVariant v);
PromptVariant parse_prompt_variant(const std::string& s);

struct ChatMessage {
  std::string role;
  std::string content;
};

struct SamplingParams {
  double temperature = 1.0;
  int max_tokens = 1024;
  long seed = 123;
};

struct PromptBundle {
  PromptVariant variant = PromptVariant::Improved;
  std::string system;  // empty for the raw variant
  std::string user;
  SamplingParams sampling;
  std::vector<ChatMessage> messages() const;
};

extern const char* const kRawPromptPrefix;
extern const char* const kImprovedInstruction;
extern const char* const kStrictSuffix;

PromptBundle build_prompt(const std::string& narrative, PromptVariant variant, const SamplingParams& sampling = {});

struct CorpusRecord {
  std::string patient_id;
  std::string narrative;
  int label = 0;
  PromptVariant prompt_variant = PromptVariant::Improved;
};

nlohmann::json to_json(const CorpusRecord& r);
CorpusRecord corpus_record_from_json(const nlohmann::json& j);
/// One JSON object per line.
std::string corpus_jsonl(const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);

/// Renders every row of `rows` (schema columns) into corpus records.
std::vector<CorpusRecord> build_corpus(const Matrix& rows, const Labels& labels, const std::vector<std::string>& ids,
                                       const FeatureSchema& schema, PromptVariant variant);

}  // namespace mortpred
