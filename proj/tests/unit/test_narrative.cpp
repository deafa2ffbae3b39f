#include <doctest.h>

#include <map>

#include "fixtures.hpp"
#include "mortpred/error.hpp"
#include "mortpred/io.hpp"
#include "mortpred/narrative.hpp"
#include "oracles.hpp"

using namespace mortpred;

namespace {

Eigen::RowVectorXd row(double age, double sex, double fever, double cough, double diabetes, double o2, double crp) {
  Eigen::RowVectorXd r(7);
  r << age, sex, fever, cough, diabetes, o2, crp;
  return r;
}

std::map<std::string, std::string> display_names(const FeatureSchema& s) {
  std::map<std::string, std::string> m;
  for (const auto& f : s.features) m[f.display_name.empty() ? f.name : f.display_name] = f.name;
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("lab bands are inclusive") {
  const NormalRange r{95, 100};
  CHECK(classify_lab(95.0, r) == LabBand::Within);
  CHECK(classify_lab(100.0, r) == LabBand::Within);
  CHECK(classify_lab(94.999, r) == LabBand::Below);
  CHECK(classify_lab(100.5, r) == LabBand::Above);
  const auto schema = fixtures::small_schema();
  CHECK(code_of([&] { classify_lab(schema.at("fever"), 1.0); }) == ErrorCode::MissingRange);
  CHECK(classify_lab(schema.at("crp"), 12.0).band == LabBand::Above);
}

TEST_CASE("reference narrative") {
  const auto schema = fixtures::small_schema();
  const auto n = render_narrative(row(63, 1, 1, 0, 1, 90, 5), schema);
  CHECK(n.text ==
        "The patient's age is 63. The patient is male. The patient has fever. Past medical history includes "
        "diabetes. Oxygen saturation is lower than the normal range.");
  CHECK(render_narrative(row(63, 1, 1, 0, 1, 90, 5), schema).text == n.text);
}

TEST_CASE("negatives and normal labs leave only age and sex") {
  const auto schema = fixtures::small_schema();
  CHECK(render_narrative(row(41.6, 0, 0, 0, 0, 97, 3), schema).text ==
        "The patient's age is 42. The patient is female.");
}

TEST_CASE("matching bands share one predicate") {
  const auto schema = fixtures::small_schema();
  CHECK(render_narrative(row(70, 1, 1, 1, 0, 101, 15), schema).text ==
        "The patient's age is 70. The patient is male. The patient has fever and cough. Oxygen saturation and "
        "C-reactive protein are higher than the normal range.");
  // Above is stated before below.
  CHECK(render_narrative(row(70, 1, 0, 0, 0, 80, 15), schema).text ==
        "The patient's age is 70. The patient is male. C-reactive protein is higher than the normal range. Oxygen "
        "saturation is lower than the normal range.");
}

TEST_CASE("missing cells") {
  const auto schema = fixtures::small_schema();
  const auto n = render_narrative(row(50, 1, kMissing, 1, kMissing, kMissing, 20), schema);
  CHECK(n.text ==
        "The patient's age is 50. The patient is male. The patient has cough. C-reactive protein is higher than the "
        "normal range.");
  CHECK(code_of([&] { render_narrative(row(kMissing, 1, 0, 0, 0, 97, 3), schema); }) == ErrorCode::MissingAge);
  CHECK(code_of([&] { render_narrative(row(50, kMissing, 0, 0, 0, 97, 3), schema); }) == ErrorCode::MissingSex);
}

TEST_CASE("omission soundness and round trip on random rows") {
  const auto schema = fixtures::small_schema();
  const auto names = display_names(schema);
  Rng rng(2024);
  for (int t = 0; t < 1000; ++t) {
    auto pick = [&](double p) { return uniform01(rng) < p ? 1.0 : 0.0; };
    const auto r = row(18 + 80 * uniform01(rng), pick(0.5), pick(0.4), pick(0.4), pick(0.3), 85 + 20 * uniform01(rng),
                       15 * uniform01(rng));
    const auto n = render_narrative(r, schema);
    CAPTURE(n.text);

    std::set<std::pair<std::string, std::string>> expected;
    for (const auto& item : n.included) expected.emplace(item.feature, item.status);
    CHECK(oracle::parse_narrative(n.text, names) == expected);

    // Independent expectation from the raw values.
    std::set<std::pair<std::string, std::string>> truth{{"age", std::to_string(std::lround(r(0)))},
                                                        {"sex", r(1) == 1 ? "male" : "female"}};
    for (int j : {2, 3, 4}) {
      if (r(j) == 1) truth.emplace(schema.features[static_cast<std::size_t>(j)].name, "positive");
    }
    if (r(5) < 95) truth.emplace("o2_sat", "below");
    if (r(5) > 100) truth.emplace("o2_sat", "above");
    if (r(6) > 10) truth.emplace("crp", "above");
    CHECK(expected == truth);

    for (const auto& f : n.omitted) {
      const auto& spec = schema.at(f);
      std::string shown = spec.display_name.empty() ? spec.name : spec.display_name;
      std::string lower = n.text;
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      for (auto& c : shown) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      CHECK(lower.find(shown) == std::string::npos);
    }
  }
}

TEST_CASE("prompt variants") {
  const std::string text = "The patient's age is 63. The patient is male.";
  const auto raw = build_prompt(text, PromptVariant::Raw);
  CHECK(raw.system.empty());
  CHECK(raw.user ==
        "Does the patient survive or die based on the provided medical history? patient history is: [The patient's "
        "age is 63. The patient is male.]");
  CHECK(raw.messages().size() == 1);

  const std::string improved =
      "You're tasked with analyzing the present symptoms, past medical history, laboratory data, age, and gender of "
      "COVID-19 patients to determine their outcome, which is enclosed in square brackets. Your goal is to predict "
      "whether the patient will \"survive\" or \"die\" based on this information.";
  const auto imp = build_prompt(text, PromptVariant::Improved);
  CHECK(imp.system == improved);
  CHECK(imp.user == "[" + text + "]");
  REQUIRE(imp.messages().size() == 2);
  CHECK(imp.messages()[0].role == "system");

  const auto strict = build_prompt(text, PromptVariant::Strict);
  CHECK(strict.system == improved + " Predict patient mortality in JUST ONE word and DO NOT answer vaguely.");
  CHECK(strict.sampling.temperature == 1.0);
  CHECK(strict.sampling.max_tokens == 1024);
  CHECK(strict.sampling.seed == 123);

  CHECK(parse_prompt_variant("strict") == PromptVariant::Strict);
  CHECK(code_of([] { parse_prompt_variant("loud"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("corpus JSONL") {
  const auto schema = fixtures::small_schema();
  Matrix rows(2, 7);
  rows.row(0) = row(63, 1, 1, 0, 1, 90, 5);
  rows.row(1) = row(30, 0, 0, 0, 0, 97, 1);
  const auto corpus = build_corpus(rows, {1, 0}, {"a", "b"}, schema, PromptVariant::Improved);
  const std::string jsonl = corpus_jsonl(corpus);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
  CHECK(jsonl.find("\"label\":\"die\"") != std::string::npos);

  fixtures::TempDir dir("corpus");
  io::write_text(dir / "c.jsonl", jsonl);
  const auto back = read_corpus(dir / "c.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].patient_id == "a");
  CHECK(back[0].narrative == corpus[0].narrative);
  CHECK(back[1].label == 0);
  CHECK(code_of([&] { build_corpus(rows, {1}, {"a", "b"}, schema, PromptVariant::Raw); }) == ErrorCode::LengthMismatch);
}
