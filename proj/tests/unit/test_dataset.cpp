#include <doctest.h>

#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mortpred/dataset.hpp"
#include "mortpred/error.hpp"

using namespace mortpred;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

const char* kHeader = "hospital,death,age,sex,fever,cough,diabetes,o2_sat,crp\n";

Dataset parse(const std::string& body) {
  std::istringstream in(std::string(kHeader) + body);
  return parse_csv(in, fixtures::small_schema());
}

Dataset ten_rows() {
  std::string body;
  for (int i = 0; i < 10; ++i) {
    body += (i < 4 ? "H4," : "H1,") + std::to_string(i % 2) + "," + std::to_string(40 + i) + ",1,0,1,0,97,3\n";
  }
  return parse(body);
}

}  // namespace

TEST_CASE("load a clean CSV") {
  const auto ds = parse("H1,1,63,1,1,0,1,84,2\nH2,0,40,0,0,0,0,98,1\nH1,survive,55,1,0,1,0,96,12\n");
  CHECK(ds.n() == 3);
  CHECK(ds.missing_count() == 0);
  CHECK(ds.labels == Labels{1, 0, 0});
  CHECK(ds.rows(0, 0) == 63);
  CHECK(ds.hospital[1] == "H2");
  CHECK(ds.ids[2] == "P2");
}

TEST_CASE("header order does not matter") {
  std::istringstream in("crp,o2_sat,diabetes,cough,fever,sex,age,death,hospital\n2,84,1,0,1,1,63,die,H1\n");
  const auto ds = parse_csv(in, fixtures::small_schema());
  CHECK(ds.rows(0, 0) == 63);
  CHECK(ds.rows(0, 6) == 2);
  CHECK(ds.labels[0] == 1);
}

TEST_CASE("missing tokens") {
  const auto ds = parse("H1,1,,1,NA,0,nan,84,\n");
  CHECK(ds.missing_count() == 4);
  CHECK(is_missing(ds.rows(0, 0)));
  CHECK(is_missing_token("NaN"));
  CHECK(is_missing_token("na"));
  CHECK_FALSE(is_missing_token("0"));
}

TEST_CASE("load errors") {
  CHECK(code_of([] {
          std::istringstream in(std::string("extra,") + kHeader);
          parse_csv(in, fixtures::small_schema());
        }) == ErrorCode::UnknownColumn);
  CHECK(code_of([] { parse("H1,1,63,2,1,0,1,84,2\n"); }) == ErrorCode::TypeMismatch);
  CHECK(code_of([] { parse("H1,1,abc,1,1,0,1,84,2\n"); }) == ErrorCode::TypeMismatch);
  CHECK(code_of([] {
          std::istringstream in("age,age,sex,fever,cough,diabetes,o2_sat,crp,death,hospital\n");
          parse_csv(in, fixtures::small_schema());
        }) == ErrorCode::DuplicateFeatureName);
  try {
    parse("H1,1,63,1,1,0,1,84,2\nH1,1,63,1,yes,0,1,84,2\n");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fever") != std::string::npos);
  }
}

TEST_CASE("schema validation") {
  auto s = fixtures::small_schema();
  CHECK_NOTHROW(validate(s));
  auto dup = s;
  dup.features.push_back(dup.features[0]);
  CHECK(code_of([&] { validate(dup); }) == ErrorCode::DuplicateFeatureName);
  auto bad = s;
  bad.features[5].normal_range = NormalRange{100, 95};
  CHECK(code_of([&] { validate(bad); }) == ErrorCode::InvalidSchema);
  auto norange = s;
  norange.features[6].normal_range.reset();
  CHECK(code_of([&] { validate(norange); }) == ErrorCode::MissingRange);
}

TEST_CASE("schema file round trip") {
  fixtures::TempDir dir("schema");
  SchemaFile f{fixtures::small_schema(), std::string("H4"), 42};
  save_schema_file(dir / "schema.json", f);
  const auto back = load_schema_file(dir / "schema.json");
  CHECK(to_json(back.schema) == to_json(f.schema));
  CHECK(back.external_hospital == f.external_hospital);
  CHECK(back.seed == f.seed);
}

TEST_CASE("csv write/read round trip") {
  fixtures::TempDir dir("csv");
  const auto ds = parse("H1,1,63.25,1,1,0,1,84,\nH2,0,40,0,,0,0,98,1\n");
  write_csv(dir / "d.csv", ds);
  const auto back = load_csv(dir / "d.csv", ds.schema);
  CHECK(back.labels == ds.labels);
  CHECK(back.hospital == ds.hospital);
  CHECK(back.missing_count() == 2);
  CHECK(back.rows(0, 0) == 63.25);
}

TEST_CASE("duplicate feature columns are dropped") {
  auto s = fixtures::small_schema();
  s.features.push_back({"fever2", FeatureKind::Symptom, FeatureType::Binary, std::nullopt, "pyrexia"});
  s.declared_feature_count = 7;
  std::istringstream in(std::string("hospital,death,age,sex,fever,cough,diabetes,o2_sat,crp,fever2\n") +
                        "H1,1,63,1,1,0,0,84,2,1\nH1,0,50,0,0,1,1,99,3,0\nH1,0,52,1,0,0,1,97,4,0\n");
  const auto r = drop_duplicate_features(parse_csv(in, s));
  CHECK(r.dropped == std::vector<std::string>{"fever2"});
  CHECK(r.dataset.p() == 7);
}

TEST_CASE("splits") {
  const auto ds = ten_rows();
  SUBCASE("external rows are exactly the hospital's") {
    const auto b = make_splits(ds, "H4", 0.2, 0, 42);
    CHECK(b.external_rows == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(b.internal_test.n() == internal_test_size(6, 0.2));
    CHECK(b.internal_test.n() == 1);
    std::set<std::size_t> all;
    for (const auto* v : {&b.train_rows, &b.internal_test_rows, &b.external_rows}) all.insert(v->begin(), v->end());
    CHECK(all.size() == ds.n());
    CHECK(b.train.n() + b.internal_test.n() + b.external.n() == ds.n());
  }
  SUBCASE("deterministic") {
    const auto a = make_splits(ds, "H4", 0.5, 2, 7);
    const auto b = make_splits(ds, "H4", 0.5, 2, 7);
    CHECK(split_indices_json(a) == split_indices_json(b));
    for (auto z : a.zsc_rows) {
      CHECK(std::find(a.internal_test_rows.begin(), a.internal_test_rows.end(), z) != a.internal_test_rows.end());
    }
    const auto c = splits_from_indices(ds, split_indices_json(a));
    CHECK(c.train.ids == a.train.ids);
  }
  SUBCASE("errors") {
    CHECK(code_of([&] { make_splits(ds, "H9", 0.2, 0, 1); }) == ErrorCode::HospitalNotFound);
    CHECK(code_of([&] { make_splits(ds, "H4", 0.2, 2, 1); }) == ErrorCode::ZscTooLarge);
  }
  SUBCASE("rounding rule") {
    CHECK(internal_test_size(6, 0.2) == 1);
    CHECK(internal_test_size(10, 0.25) == 3);  // 2.5 rounds half up
    CHECK(internal_test_size(100, 0.2) == 20);
  }
}
