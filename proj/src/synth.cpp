#include "mortpred/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

using nlohmann::json;

namespace {

struct NumericDef {
  const char* name;
  const char* display;
  FeatureKind kind;
  double lo, hi;
  bool low_is_bad;
};

// Normal ranges in conventional units.
const NumericDef kNumerics[] = {
    {"o2_sat", "oxygen saturation", FeatureKind::Vital, 95, 100, true},
    {"sbp", "systolic blood pressure", FeatureKind::Vital, 90, 120, true},
    {"dbp", "diastolic blood pressure", FeatureKind::Vital, 60, 80, true},
    {"heart_rate", "heart rate", FeatureKind::Vital, 60, 100, false},
    {"resp_rate", "respiratory rate", FeatureKind::Vital, 12, 20, false},
    {"temperature", "body temperature", FeatureKind::Vital, 36.1, 37.2, false},
    {"crp", "C-reactive protein", FeatureKind::Lab, 0, 10, false},
    {"wbc", "white blood cell count", FeatureKind::Lab, 4, 11, false},
    {"lymphocytes", "lymphocyte count", FeatureKind::Lab, 1, 4.8, true},
    {"platelets", "platelet count", FeatureKind::Lab, 150, 450, true},
    {"hemoglobin", "hemoglobin level", FeatureKind::Lab, 12, 17.5, true},
    {"creatinine", "creatinine level", FeatureKind::Lab, 0.6, 1.3, false},
    {"bun", "blood urea nitrogen", FeatureKind::Lab, 7, 20, false},
    {"ldh", "lactate dehydrogenase", FeatureKind::Lab, 140, 280, false},
    {"d_dimer", "D-dimer", FeatureKind::Lab, 0, 0.5, false},
    {"ferritin", "ferritin level", FeatureKind::Lab, 20, 300, false},
    {"troponin", "troponin level", FeatureKind::Lab, 0, 0.04, false},
    {"procalcitonin", "procalcitonin level", FeatureKind::Lab, 0, 0.1, false},
    {"sodium", "sodium level", FeatureKind::Lab, 135, 145, true},
    {"potassium", "potassium level", FeatureKind::Lab, 3.5, 5.1, false},
    {"alt", "ALT level", FeatureKind::Lab, 7, 56, false},
    {"ast", "AST level", FeatureKind::Lab, 10, 40, false},
};

struct BinaryDef {
  const char* name;
  const char* display;
  FeatureKind kind;
};

const BinaryDef kBinaries[] = {
    {"fever", "fever", FeatureKind::Symptom},
    {"cough", "cough", FeatureKind::Symptom},
    {"dyspnea", "dyspnea", FeatureKind::Symptom},
    {"fatigue", "fatigue", FeatureKind::Symptom},
    {"myalgia", "myalgia", FeatureKind::Symptom},
    {"headache", "headache", FeatureKind::Symptom},
    {"sore_throat", "sore throat", FeatureKind::Symptom},
    {"rhinorrhea", "rhinorrhea", FeatureKind::Symptom},
    {"nausea", "nausea", FeatureKind::Symptom},
    {"vomiting", "vomiting", FeatureKind::Symptom},
    {"diarrhea", "diarrhea", FeatureKind::Symptom},
    {"anosmia", "anosmia", FeatureKind::Symptom},
    {"ageusia", "ageusia", FeatureKind::Symptom},
    {"chest_pain", "chest pain", FeatureKind::Symptom},
    {"chills", "chills", FeatureKind::Symptom},
    {"confusion", "confusion", FeatureKind::Symptom},
    {"abdominal_pain", "abdominal pain", FeatureKind::Symptom},
    {"hemoptysis", "hemoptysis", FeatureKind::Symptom},
    {"diabetes", "diabetes", FeatureKind::History},
    {"hypertension", "hypertension", FeatureKind::History},
    {"asthma", "asthma", FeatureKind::History},
    {"copd", "chronic obstructive pulmonary disease", FeatureKind::History},
    {"cad", "coronary artery disease", FeatureKind::History},
    {"heart_failure", "heart failure", FeatureKind::History},
    {"ckd", "chronic kidney disease", FeatureKind::History},
    {"cancer", "cancer", FeatureKind::History},
    {"stroke", "stroke", FeatureKind::History},
    {"obesity", "obesity", FeatureKind::History},
    {"smoking", "smoking", FeatureKind::History},
    {"cirrhosis", "liver cirrhosis", FeatureKind::History},
    {"hiv", "HIV infection", FeatureKind::History},
    {"hypothyroidism", "hypothyroidism", FeatureKind::History},
    {"rheumatoid_arthritis", "rheumatoid arthritis", FeatureKind::History},
    {"dementia", "dementia", FeatureKind::History},
    {"atrial_fibrillation", "atrial fibrillation", FeatureKind::History},
    {"pvd", "peripheral vascular disease", FeatureKind::History},
    {"depression", "depression", FeatureKind::History},
    {"anemia", "anemia", FeatureKind::History},
    {"tuberculosis", "tuberculosis", FeatureKind::History},
    {"transplant", "organ transplant", FeatureKind::History},
    {"remdesivir", "remdesivir", FeatureKind::Treatment},
    {"dexamethasone", "dexamethasone", FeatureKind::Treatment},
    {"hydroxychloroquine", "hydroxychloroquine", FeatureKind::Treatment},
    {"azithromycin", "azithromycin", FeatureKind::Treatment},
    {"favipiravir", "favipiravir", FeatureKind::Treatment},
    {"tocilizumab", "tocilizumab", FeatureKind::Treatment},
    {"oxygen_therapy", "oxygen therapy", FeatureKind::Treatment},
    {"ventilation", "mechanical ventilation", FeatureKind::Treatment},
    {"icu", "ICU admission", FeatureKind::Treatment},
    {"anticoagulants", "anticoagulant therapy", FeatureKind::Treatment},
    {"antibiotics", "antibiotic therapy", FeatureKind::Treatment},
    {"plasma", "convalescent plasma", FeatureKind::Treatment},
};

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double round_to(double v, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::round(v * f) / f;
}

std::string to_string(EffectShape s) {
  switch (s) {
    case EffectShape::Hinge: return "hinge";
    case EffectShape::Step: return "step";
    case EffectShape::Linear: return "linear";
  }
  return "linear";
}

}  // namespace

void validate(const SynthConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (c.n < 2) bad("n must be at least 2");
  if (c.p_numeric < 1) bad("p_numeric must include age");
  if (c.p_binary < 1) bad("p_binary must include sex");
  if (c.informative > c.p_numeric + c.p_binary) bad("informative exceeds the feature count");
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) bad("missing_rate must lie in [0, 1)");
  if (!(c.minority_fraction > 0.0 && c.minority_fraction <= 0.5)) bad("minority_fraction must lie in (0, 0.5]");
  if (c.hospitals < 1) bad("hospitals must be at least 1");
  if (!(c.coefficient_scale >= 0.0) || !std::isfinite(c.coefficient_scale)) bad("coefficient_scale must be >= 0");
}

json to_json(const SynthConfig& c) {
  return {{"n", c.n},
          {"p_numeric", c.p_numeric},
          {"p_binary", c.p_binary},
          {"informative", c.informative},
          {"coefficient_scale", c.coefficient_scale},
          {"missing_rate", c.missing_rate},
          {"minority_fraction", c.minority_fraction},
          {"hospitals", c.hospitals},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  c.n = j.value("n", c.n);
  c.p_numeric = j.value("p_numeric", c.p_numeric);
  c.p_binary = j.value("p_binary", c.p_binary);
  c.informative = j.value("informative", c.informative);
  c.coefficient_scale = j.value("coefficient_scale", c.coefficient_scale);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  c.minority_fraction = j.value("minority_fraction", c.minority_fraction);
  c.hospitals = j.value("hospitals", c.hospitals);
  c.seed = j.value("seed", c.seed);
  validate(c);
  return c;
}

SynthResult generate(const SynthConfig& config) {
  validate(config);
  SynthResult r;
  r.config = config;
  const std::size_t n = config.n;

  // Schema: age first, then catalogue numerics, then sex and catalogue
  // binaries. Beyond the catalogue, generic names whose display strings never
  // contain one another.
  FeatureSchema schema;
  schema.id_column = "patient_id";
  schema.label_name = "death";
  schema.hospital_column = "hospital";
  schema.features.push_back({"age", FeatureKind::Demographic, FeatureType::Numeric, std::nullopt, "age"});
  std::vector<bool> low_is_bad{false};
  constexpr std::size_t kNumCatalogue = std::size(kNumerics);
  for (std::size_t k = 0; k + 1 < config.p_numeric; ++k) {
    if (k < kNumCatalogue) {
      const auto& d = kNumerics[k];
      schema.features.push_back({d.name, d.kind, FeatureType::Numeric, NormalRange{d.lo, d.hi}, d.display});
      low_is_bad.push_back(d.low_is_bad);
    } else {
      const std::string id = std::to_string(k - kNumCatalogue + 1);
      schema.features.push_back({"analyte_" + id, FeatureKind::Lab, FeatureType::Numeric, NormalRange{0, 1},
                                 "analyte " + id + " level"});
      low_is_bad.push_back(false);
    }
  }
  const std::size_t first_binary = schema.features.size();
  schema.features.push_back({"sex", FeatureKind::Demographic, FeatureType::Binary, std::nullopt, "sex"});
  constexpr std::size_t kBinCatalogue = std::size(kBinaries);
  for (std::size_t k = 0; k + 1 < config.p_binary; ++k) {
    if (k < kBinCatalogue) {
      const auto& d = kBinaries[k];
      schema.features.push_back({d.name, d.kind, FeatureType::Binary, std::nullopt, d.display});
    } else {
      const std::string id = std::to_string(k - kBinCatalogue + 1);
      schema.features.push_back({"finding_" + id, FeatureKind::Symptom, FeatureType::Binary, std::nullopt,
                                 "finding " + id + " marker"});
    }
  }
  const std::size_t p = schema.features.size();

  // Structure: which features matter and how.
  Rng srng(derive_seed(config.seed, 0));
  std::vector<double> prevalence(p, 0.5);
  for (std::size_t j = first_binary + 1; j < p; ++j) prevalence[j] = 0.05 + 0.4 * uniform01(srng);
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < p; ++j) {
    if (j != 0 && j != 1) order.push_back(j);
  }
  shuffle(order, srng);
  std::vector<std::size_t> chosen;
  if (config.informative >= 1) chosen.push_back(0);                             // age
  if (config.informative >= 2 && config.p_numeric >= 2) chosen.push_back(1);  // oxygen saturation
  for (std::size_t j : order) {
    if (chosen.size() >= config.informative) break;
    chosen.push_back(j);
  }
  // Effect sizes decay with a random importance rank so a handful of terms
  // dominate; age and oxygen saturation lead.
  std::vector<double> weight(p, 0.0);
  for (std::size_t k = 0; k < chosen.size(); ++k) weight[chosen[k]] = std::pow(0.88, static_cast<double>(k));
  std::sort(chosen.begin(), chosen.end());

  const double scale = config.coefficient_scale;
  std::vector<std::size_t> informative_binaries;
  for (std::size_t j : chosen) {
    const auto& f = schema.features[j];
    r.informative.push_back(f.name);
    SynthEffect e;
    e.feature = f.name;
    if (f.dtype == FeatureType::Numeric) {
      e.sign = low_is_bad[j] ? -1.0 : 1.0;
      if (j <= 1) {
        e.shape = EffectShape::Hinge;
        e.threshold = 0.0;
        e.beta = 1.5 * scale;
      } else if (uniform01(srng) < 0.6) {
        e.shape = EffectShape::Step;
        e.threshold = uniform01(srng);
        e.beta = (1.4 + 0.8 * uniform01(srng)) * weight[j] * scale;
      } else {
        e.shape = EffectShape::Hinge;
        e.threshold = -0.5 + uniform01(srng);
        e.beta = (0.6 + 0.4 * uniform01(srng)) * weight[j] * scale;
      }
    } else {
      e.shape = EffectShape::Linear;
      e.sign = uniform01(srng) < 0.8 ? 1.0 : -1.0;
      e.beta = (0.6 + 0.6 * uniform01(srng)) * weight[j] * scale;
      if (j != first_binary) informative_binaries.push_back(j);
    }
    r.effects.push_back(e);
  }
  // Disjoint interacting pairs among informative binaries.
  for (std::size_t k = 0; k + 1 < informative_binaries.size(); k += 2) {
    SynthEffect e;
    e.feature = schema.features[informative_binaries[k]].name;
    e.partner = schema.features[informative_binaries[k + 1]].name;
    e.shape = EffectShape::Linear;
    e.beta = 1.5 * std::max(weight[informative_binaries[k]], weight[informative_binaries[k + 1]]) * scale;
    r.effects.push_back(e);
  }

  // Latent features.
  Rng frng(derive_seed(config.seed, 1));
  Matrix Z(n, first_binary);
  Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < first_binary; ++j) Z(ii, static_cast<Eigen::Index>(j)) = standard_normal(frng);
    X(ii, 0) = std::clamp(std::round(52.0 + 17.0 * Z(ii, 0)), 18.0, 100.0);
    for (std::size_t j = 1; j < first_binary; ++j) {
      const auto& range = *schema.features[j].normal_range;
      const double half = 0.5 * (range.hi - range.lo);
      const int decimals = std::max(0, 2 - static_cast<int>(std::floor(std::log10(half))));
      const double v = 0.5 * (range.lo + range.hi) + 1.25 * half * Z(ii, static_cast<Eigen::Index>(j));
      X(ii, static_cast<Eigen::Index>(j)) = round_to(std::max(v, 0.0), decimals);
    }
    for (std::size_t j = first_binary; j < p; ++j) X(ii, static_cast<Eigen::Index>(j)) = uniform01(frng) < prevalence[j];
  }

  // True log-odds without intercept.
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < p; ++j) col[schema.features[j].name] = j;
  Vector eta = Vector::Zero(static_cast<Eigen::Index>(n));
  for (const auto& e : r.effects) {
    const auto j = static_cast<Eigen::Index>(col.at(e.feature));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      double t = 0.0;
      if (!e.partner.empty()) {
        t = X(i, j) * X(i, static_cast<Eigen::Index>(col.at(e.partner)));
      } else if (e.shape == EffectShape::Linear) {
        t = e.sign * X(i, j);
      } else {
        const double s = e.sign * Z(i, j);
        t = e.shape == EffectShape::Hinge ? std::max(0.0, s - e.threshold) : (s > e.threshold ? 1.0 : 0.0);
      }
      eta(i) += e.beta * t;
    }
  }
  // Intercept by bisection on the mean probability (monotone in b).
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double mean = (eta.array() + mid).unaryExpr([](double t) { return sigmoid(t); }).mean();
    (mean < config.minority_fraction ? lo : hi) = mid;
  }
  r.intercept = 0.5 * (lo + hi);
  r.bayes_prob = (eta.array() + r.intercept).unaryExpr([](double t) { return sigmoid(t); }).matrix();

  Rng yrng(derive_seed(config.seed, 2));
  Dataset& ds = r.dataset;
  ds.schema = schema;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = uniform01(yrng) < r.bayes_prob(static_cast<Eigen::Index>(i)) ? 1 : 0;
    ds.hospital.push_back("H" + std::to_string(i % config.hospitals + 1));
    char id[32];
    std::snprintf(id, sizeof id, "P%05zu", i + 1);
    ds.ids.emplace_back(id);
  }

  Rng mrng(derive_seed(config.seed, 3));
  if (config.missing_rate > 0) {
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        if (j == 0 || j == first_binary) continue;
        if (uniform01(mrng) < config.missing_rate) X(i, static_cast<Eigen::Index>(j)) = kMissing;
      }
    }
  }
  ds.rows = std::move(X);
  check_invariants(ds);
  return r;
}

json truth_json(const SynthResult& r) {
  json effects = json::array();
  for (const auto& e : r.effects) {
    json j = {{"feature", e.feature}, {"shape", to_string(e.shape)}, {"sign", e.sign},
              {"threshold", e.threshold}, {"beta", e.beta}};
    if (!e.partner.empty()) j["partner"] = e.partner;
    effects.push_back(j);
  }
  return {{"config", to_json(r.config)},
          {"intercept", r.intercept},
          {"informative", r.informative},
          {"effects", effects},
          {"ids", r.dataset.ids},
          {"bayes_prob", io::to_json(r.bayes_prob)}};
}

void write_synth(const SynthResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "data.csv", r.dataset);
  SchemaFile sf;
  sf.schema = r.dataset.schema;
  sf.external_hospital = "H" + std::to_string(r.config.hospitals);
  sf.seed = r.config.seed;
  save_schema_file(dir / "schema.json", sf);
  io::write_json(dir / "truth.json", truth_json(r));
}

Vector bayes_scores_for(const json& truth, const std::vector<std::string>& ids) {
  const auto all_ids = truth.at("ids").get<std::vector<std::string>>();
  const Vector prob = io::vector_from_json(truth.at("bayes_prob"));
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < all_ids.size(); ++i) by_id[all_ids[i]] = prob(static_cast<Eigen::Index>(i));
  Vector out(static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = by_id.find(ids[i]);
    if (it == by_id.end()) throw Error(ErrorCode::InvalidArgument, "no Bayes score for patient " + ids[i]);
    out(static_cast<Eigen::Index>(i)) = it->second;
  }
  return out;
}

}  // namespace mortpred
