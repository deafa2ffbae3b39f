#include "mortpred/narrative.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

using nlohmann::json;

const char* const kRawPromptPrefix =
    "Does the patient survive or die based on the provided medical history? patient history is: ";
const char* const kImprovedInstruction =
    "You're tasked with analyzing the present symptoms, past medical history, laboratory data, age, and gender of "
    "COVID-19 patients to determine their outcome, which is enclosed in square brackets. Your goal is to predict "
    "whether the patient will \"survive\" or \"die\" based on this information.";
const char* const kStrictSuffix = " Predict patient mortality in JUST ONE word and DO NOT answer vaguely.";

namespace {

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? " and " : ", ";
    out += items[i];
  }
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string label_of(const FeatureSpec& f) { return f.display_name.empty() ? f.name : f.display_name; }

std::string format_age(double age) {
  const double r = std::round(age);
  return std::to_string(static_cast<long long>(r));
}

}  // namespace

std::string to_string(LabBand b) {
  switch (b) {
    case LabBand::Below: return "below";
    case LabBand::Within: return "within";
    case LabBand::Above: return "above";
  }
  return "within";
}

LabBand classify_lab(double value, const NormalRange& range) {
  if (value < range.lo) return LabBand::Below;
  if (value > range.hi) return LabBand::Above;
  return LabBand::Within;
}

LabClassification classify_lab(const FeatureSpec& spec, double value) {
  if (!spec.normal_range) throw Error(ErrorCode::MissingRange, "feature '" + spec.name + "' has no normal range");
  if (!std::isfinite(value)) throw Error(ErrorCode::InvalidArgument, "value for '" + spec.name + "' is not finite");
  return {spec.name, classify_lab(value, *spec.normal_range)};
}

PatientNarrative render_narrative(const Eigen::Ref<const Eigen::RowVectorXd>& row, const FeatureSchema& schema) {
  if (row.size() != static_cast<Eigen::Index>(schema.size())) {
    throw Error(ErrorCode::ShapeMismatch, "row width differs from schema");
  }
  const auto age_idx = schema.index_of(schema.age_feature);
  const auto sex_idx = schema.index_of(schema.sex_feature);
  if (!age_idx || is_missing(row(static_cast<Eigen::Index>(*age_idx)))) {
    throw Error(ErrorCode::MissingAge, "row has no age value");
  }
  if (!sex_idx || is_missing(row(static_cast<Eigen::Index>(*sex_idx)))) {
    throw Error(ErrorCode::MissingSex, "row has no sex value");
  }

  PatientNarrative n;
  const std::string age = format_age(row(static_cast<Eigen::Index>(*age_idx)));
  const bool male = row(static_cast<Eigen::Index>(*sex_idx)) == schema.male_value;
  std::vector<std::string> sentences{"The patient's age is " + age + ".",
                                     std::string("The patient is ") + (male ? "male." : "female.")};
  n.included.push_back({schema.age_feature, age});
  n.included.push_back({schema.sex_feature, male ? "male" : "female"});

  std::vector<std::string> symptoms, history, treatments, other, above, below;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    if (j == *age_idx || j == *sex_idx) continue;
    const auto& f = schema.features[j];
    const double v = row(static_cast<Eigen::Index>(j));
    if (is_missing(v)) {
      n.omitted.push_back(f.name);
      continue;
    }
    if (f.dtype == FeatureType::Numeric) {
      if (!f.normal_range) {
        n.omitted.push_back(f.name);
        continue;
      }
      const auto band = classify_lab(v, *f.normal_range);
      if (band == LabBand::Within) {
        n.omitted.push_back(f.name);
        continue;
      }
      (band == LabBand::Above ? above : below).push_back(label_of(f));
      n.included.push_back({f.name, to_string(band)});
      continue;
    }
    // Imputed binaries can be fractional after interpolation; >= 0.5 is positive.
    const bool positive = f.dtype == FeatureType::Binary ? v >= 0.5 : std::lround(v) != 0;
    if (!positive) {
      n.omitted.push_back(f.name);
      continue;
    }
    std::string phrase = label_of(f);
    if (f.dtype == FeatureType::Categorical) phrase += " (category " + std::to_string(std::lround(v)) + ")";
    switch (f.kind) {
      case FeatureKind::Symptom: symptoms.push_back(phrase); break;
      case FeatureKind::History: history.push_back(phrase); break;
      case FeatureKind::Treatment: treatments.push_back(phrase); break;
      default: other.push_back(phrase); break;
    }
    n.included.push_back({f.name, "positive"});
  }

  if (!symptoms.empty()) sentences.push_back("The patient has " + join_list(symptoms) + ".");
  if (!history.empty()) sentences.push_back("Past medical history includes " + join_list(history) + ".");
  if (!treatments.empty()) sentences.push_back("The patient received " + join_list(treatments) + ".");
  if (!other.empty()) sentences.push_back("Other findings include " + join_list(other) + ".");
  auto band_sentence = [](const std::vector<std::string>& names, const char* dir) {
    return capitalize(join_list(names)) + (names.size() == 1 ? " is " : " are ") + dir + " than the normal range.";
  };
  if (!above.empty()) sentences.push_back(band_sentence(above, "higher"));
  if (!below.empty()) sentences.push_back(band_sentence(below, "lower"));

  for (std::size_t i = 0; i < sentences.size(); ++i) n.text += (i ? " " : "") + sentences[i];
  return n;
}

std::string to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::Raw: return "raw";
    case PromptVariant::Improved: return "improved";
    case PromptVariant::Strict: return "strict";
  }
  return "improved";
}

PromptVariant parse_prompt_variant(const std::string& s) {
  if (s == "raw") return PromptVariant::Raw;
  if (s == "improved") return PromptVariant::Improved;
  if (s == "strict") return PromptVariant::Strict;
  throw Error(ErrorCode::InvalidArgument, "unknown prompt variant '" + s + "'");
}

std::vector<ChatMessage> PromptBundle::messages() const {
  std::vector<ChatMessage> m;
  if (!system.empty()) m.push_back({"system", system});
  m.push_back({"user", user});
  return m;
}

PromptBundle build_prompt(const std::string& narrative, PromptVariant variant, const SamplingParams& sampling) {
  PromptBundle b;
  b.variant = variant;
  b.sampling = sampling;
  const std::string bracketed = "[" + narrative + "]";
  switch (variant) {
    case PromptVariant::Raw: b.user = kRawPromptPrefix + bracketed; break;
    case PromptVariant::Improved:
      b.system = kImprovedInstruction;
      b.user = bracketed;
      break;
    case PromptVariant::Strict:
      b.system = std::string(kImprovedInstruction) + kStrictSuffix;
      b.user = bracketed;
      break;
  }
  return b;
}

json to_json(const CorpusRecord& r) {
  return {{"patient_id", r.patient_id},
          {"narrative", r.narrative},
          {"label", r.label == 1 ? "die" : "survive"},
          {"prompt_variant", to_string(r.prompt_variant)}};
}

CorpusRecord corpus_record_from_json(const json& j) {
  CorpusRecord r;
  r.patient_id = j.at("patient_id").get<std::string>();
  r.narrative = j.at("narrative").get<std::string>();
  const auto& l = j.at("label");
  if (l.is_number_integer()) r.label = l.get<int>();
  else r.label = l.get<std::string>() == "die" ? 1 : 0;
  r.prompt_variant = parse_prompt_variant(j.value("prompt_variant", std::string("improved")));
  return r;
}

std::string corpus_jsonl(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open corpus " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(corpus_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CorpusRecord> build_corpus(const Matrix& rows, const Labels& labels, const std::vector<std::string>& ids,
                                       const FeatureSchema& schema, PromptVariant variant) {
  if (static_cast<std::size_t>(rows.rows()) != labels.size() || labels.size() != ids.size()) {
    throw Error(ErrorCode::LengthMismatch, "rows, labels and ids differ in length");
  }
  std::vector<CorpusRecord> out;
  out.reserve(labels.size());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.push_back({ids[k], render_narrative(rows.row(i), schema).text, labels[k], variant});
  }
  return out;
}

}  // namespace mortpred
