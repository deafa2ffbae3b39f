#include "mortpred/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

Error type_mismatch(std::size_t row, const std::string& col, std::string_view cell) {
  return Error(ErrorCode::TypeMismatch, "TypeMismatch(row " + std::to_string(row) + ", col " +
                                            col + "): cannot parse '" + std::string(cell) + "'");
}

}  // namespace

std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Symptom: return "symptom";
    case FeatureKind::History: return "history";
    case FeatureKind::Demographic: return "demographic";
    case FeatureKind::Vital: return "vital";
    case FeatureKind::Lab: return "lab";
    case FeatureKind::Treatment: return "treatment";
  }
  return "symptom";
}

std::string to_string(FeatureType t) {
  switch (t) {
    case FeatureType::Numeric: return "numeric";
    case FeatureType::Binary: return "binary";
    case FeatureType::Categorical: return "categorical";
  }
  return "numeric";
}

FeatureKind parse_feature_kind(const std::string& s) {
  static const std::map<std::string, FeatureKind> kKinds = {
      {"symptom", FeatureKind::Symptom}, {"history", FeatureKind::History},
      {"demographic", FeatureKind::Demographic}, {"vital", FeatureKind::Vital},
      {"lab", FeatureKind::Lab}, {"treatment", FeatureKind::Treatment}};
  auto it = kKinds.find(lower(s));
  if (it == kKinds.end()) throw Error(ErrorCode::InvalidSchema, "unknown feature kind '" + s + "'");
  return it->second;
}

FeatureType parse_feature_type(const std::string& s) {
  const auto l = lower(s);
  if (l == "numeric") return FeatureType::Numeric;
  if (l == "binary") return FeatureType::Binary;
  if (l == "categorical") return FeatureType::Categorical;
  throw Error(ErrorCode::InvalidSchema, "unknown feature dtype '" + s + "'");
}

std::optional<std::size_t> FeatureSchema::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].name == name) return j;
  }
  return std::nullopt;
}

const FeatureSpec& FeatureSchema::at(const std::string& name) const {
  auto j = index_of(name);
  if (!j) throw Error(ErrorCode::UnknownColumn, "feature '" + name + "' not in schema");
  return features[*j];
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back(f.name);
  return out;
}

void validate(const FeatureSchema& schema) {
  std::set<std::string> seen;
  for (const auto& f : schema.features) {
    if (f.name.empty()) throw Error(ErrorCode::InvalidSchema, "feature with empty name");
    if (!seen.insert(f.name).second) {
      throw Error(ErrorCode::DuplicateFeatureName, "duplicate feature name '" + f.name + "'");
    }
    if (f.normal_range) {
      const auto [lo, hi] = *f.normal_range;
      if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
        throw Error(ErrorCode::InvalidSchema, "feature '" + f.name + "' has an invalid normal range");
      }
    }
    const bool ranged_kind = f.kind == FeatureKind::Lab || f.kind == FeatureKind::Vital;
    if (ranged_kind && f.dtype == FeatureType::Numeric && !f.normal_range) {
      throw Error(ErrorCode::MissingRange, "numeric " + to_string(f.kind) + " feature '" + f.name +
                                               "' needs a normal_range");
    }
  }
  for (const auto* col : {&schema.label_name, &schema.hospital_column, &schema.id_column}) {
    if (!col->empty() && seen.count(*col)) {
      throw Error(ErrorCode::DuplicateFeatureName, "column '" + *col + "' is both a feature and metadata");
    }
  }
  if (schema.label_name.empty() || schema.hospital_column.empty()) {
    throw Error(ErrorCode::InvalidSchema, "label_name and hospital_column are required");
  }
}

nlohmann::json to_json(const FeatureSchema& schema) {
  nlohmann::json feats = nlohmann::json::array();
  for (const auto& f : schema.features) {
    nlohmann::json jf = {{"name", f.name},
                         {"kind", to_string(f.kind)},
                         {"dtype", to_string(f.dtype)},
                         {"display_name", f.display_name}};
    if (f.normal_range) jf["normal_range"] = {f.normal_range->lo, f.normal_range->hi};
    feats.push_back(std::move(jf));
  }
  nlohmann::json j = {{"label", schema.label_name},
                      {"hospital_column", schema.hospital_column},
                      {"id_column", schema.id_column},
                      {"age_feature", schema.age_feature},
                      {"sex_feature", schema.sex_feature},
                      {"male_value", schema.male_value},
                      {"features", std::move(feats)}};
  if (schema.declared_feature_count) j["declared_feature_count"] = *schema.declared_feature_count;
  return j;
}

FeatureSchema schema_from_json(const nlohmann::json& j) {
  FeatureSchema s;
  try {
    s.label_name = j.value("label", s.label_name);
    s.hospital_column = j.value("hospital_column", s.hospital_column);
    s.id_column = j.value("id_column", s.id_column);
    s.age_feature = j.value("age_feature", s.age_feature);
    s.sex_feature = j.value("sex_feature", s.sex_feature);
    s.male_value = j.value("male_value", s.male_value);
    if (j.contains("declared_feature_count")) {
      s.declared_feature_count = j.at("declared_feature_count").get<std::size_t>();
    }
    for (const auto& jf : j.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = parse_feature_kind(jf.at("kind").get<std::string>());
      f.dtype = parse_feature_type(jf.at("dtype").get<std::string>());
      f.display_name = jf.value("display_name", f.name);
      if (jf.contains("normal_range") && !jf.at("normal_range").is_null()) {
        const auto& r = jf.at("normal_range");
        f.normal_range = NormalRange{r.at(0).get<double>(), r.at(1).get<double>()};
      }
      s.features.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, std::string("malformed schema: ") + e.what());
  }
  validate(s);
  return s;
}

SchemaFile load_schema_file(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  SchemaFile f;
  f.schema = schema_from_json(j);
  if (j.contains("external_hospital")) f.external_hospital = j.at("external_hospital").get<std::string>();
  if (j.contains("seed")) f.seed = j.at("seed").get<std::uint64_t>();
  return f;
}

void save_schema_file(const std::filesystem::path& path, const SchemaFile& file) {
  auto j = to_json(file.schema);
  if (file.external_hospital) j["external_hospital"] = *file.external_hospital;
  if (file.seed) j["seed"] = *file.seed;
  io::write_json(path, j);
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.schema = schema;
  out.rows = select_rows(rows, idx);
  out.labels = select(labels, idx);
  out.hospital.reserve(idx.size());
  out.ids.reserve(idx.size());
  for (auto i : idx) {
    out.hospital.push_back(hospital[i]);
    out.ids.push_back(ids[i]);
  }
  return out;
}

std::size_t Dataset::missing_count() const {
  return static_cast<std::size_t>(rows.array().isNaN().count());
}

void check_invariants(const Dataset& ds) {
  const auto n = ds.labels.size();
  if (static_cast<std::size_t>(ds.rows.rows()) != n || ds.hospital.size() != n || ds.ids.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "rows/labels/hospital/ids lengths differ");
  }
  if (static_cast<std::size_t>(ds.rows.cols()) != ds.schema.size()) {
    throw Error(ErrorCode::ShapeMismatch, "row width differs from schema feature count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] != 0 && ds.labels[i] != 1) throw type_mismatch(i, ds.schema.label_name, "label");
  }
  for (std::size_t j = 0; j < ds.schema.size(); ++j) {
    if (ds.schema.features[j].dtype != FeatureType::Binary) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = ds.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (!is_missing(v) && v != 0.0 && v != 1.0) {
        throw type_mismatch(i, ds.schema.features[j].name, std::to_string(v));
      }
    }
  }
}

bool is_missing_token(std::string_view cell) {
  std::string_view s = cell;
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return true;
  const auto l = lower(s);
  return l == "na" || l == "nan";
}

Dataset parse_csv(std::istream& in, const FeatureSchema& schema) {
  validate(schema);
  const auto table = io::read_csv(in);
  if (table.empty()) throw Error(ErrorCode::FormatError, "CSV has no header row");
  const auto& header = table[0];

  enum class Role { Feature, Label, Hospital, Id };
  struct Column {
    Role role;
    std::size_t feature = 0;
  };
  std::vector<Column> columns;
  std::set<std::string> seen;
  for (const auto& name : header) {
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::DuplicateFeatureName, "column '" + name + "' appears twice in the header");
    }
    if (name == schema.label_name) columns.push_back({Role::Label});
    else if (name == schema.hospital_column) columns.push_back({Role::Hospital});
    else if (!schema.id_column.empty() && name == schema.id_column) columns.push_back({Role::Id});
    else if (auto j = schema.index_of(name)) columns.push_back({Role::Feature, *j});
    else throw Error(ErrorCode::UnknownColumn, "column '" + name + "' is not in the schema");
  }
  std::vector<std::string> required = schema.names();
  required.push_back(schema.label_name);
  required.push_back(schema.hospital_column);
  if (!schema.id_column.empty()) required.push_back(schema.id_column);
  for (const auto& r : required) {
    if (!seen.count(r)) throw Error(ErrorCode::MissingColumn, "column '" + r + "' missing from CSV");
  }

  const std::size_t n = table.size() - 1;
  Dataset ds;
  ds.schema = schema;
  ds.rows = Matrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.size()), kMissing);
  ds.labels.resize(n);
  ds.hospital.resize(n);
  ds.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cells = table[i + 1];
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::FormatError, "row " + std::to_string(i) + " has " + std::to_string(cells.size()) +
                                              " cells, header has " + std::to_string(header.size()));
    }
    ds.ids[i] = "P" + std::to_string(i);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      const auto& col = columns[c];
      switch (col.role) {
        case Role::Label: {
          const auto l = lower(cell);
          if (l == "die") ds.labels[i] = 1;
          else if (l == "survive") ds.labels[i] = 0;
          else {
            auto v = parse_number(cell);
            if (!v || (*v != 0.0 && *v != 1.0)) throw type_mismatch(i, header[c], cell);
            ds.labels[i] = static_cast<int>(*v);
          }
          break;
        }
        case Role::Hospital:
          if (is_missing_token(cell)) throw type_mismatch(i, header[c], cell);
          ds.hospital[i] = cell;
          break;
        case Role::Id:
          ds.ids[i] = cell;
          break;
        case Role::Feature: {
          if (is_missing_token(cell)) break;
          const auto& spec = schema.features[col.feature];
          auto v = parse_number(cell);
          if (!v) throw type_mismatch(i, header[c], cell);
          if (spec.dtype == FeatureType::Binary && *v != 0.0 && *v != 1.0) throw type_mismatch(i, header[c], cell);
          if (spec.dtype == FeatureType::Categorical && (*v < 0.0 || std::floor(*v) != *v)) {
            throw type_mismatch(i, header[c], cell);
          }
          ds.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(col.feature)) = *v;
          break;
        }
      }
    }
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_csv(in, schema);
}

void write_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::string out;
  std::vector<std::string> header;
  if (!ds.schema.id_column.empty()) header.push_back(ds.schema.id_column);
  for (const auto& f : ds.schema.features) header.push_back(f.name);
  header.push_back(ds.schema.label_name);
  header.push_back(ds.schema.hospital_column);
  out += io::csv_line(header);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::vector<std::string> cells;
    if (!ds.schema.id_column.empty()) cells.push_back(ds.ids[i]);
    for (std::size_t j = 0; j < ds.p(); ++j) {
      cells.push_back(io::format_double(ds.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    cells.push_back(std::to_string(ds.labels[i]));
    cells.push_back(ds.hospital[i]);
    out += io::csv_line(cells);
  }
  io::write_text(path, out);
}

DedupResult drop_duplicate_features(const Dataset& ds) {
  std::vector<std::size_t> keep;
  DedupResult res;
  auto same = [&](std::size_t a, std::size_t b) {
    for (Eigen::Index i = 0; i < ds.rows.rows(); ++i) {
      const double x = ds.rows(i, static_cast<Eigen::Index>(a));
      const double y = ds.rows(i, static_cast<Eigen::Index>(b));
      if (is_missing(x) != is_missing(y)) return false;
      if (!is_missing(x) && x != y) return false;
    }
    return true;
  };
  for (std::size_t j = 0; j < ds.p(); ++j) {
    bool dup = false;
    for (auto k : keep) {
      if (same(k, j)) {
        dup = true;
        break;
      }
    }
    if (dup) res.dropped.push_back(ds.schema.features[j].name);
    else keep.push_back(j);
  }
  res.dataset = ds;
  res.dataset.rows = select_cols(ds.rows, keep);
  res.dataset.schema.features.clear();
  for (auto k : keep) res.dataset.schema.features.push_back(ds.schema.features[k]);
  if (res.dataset.schema.declared_feature_count &&
      *res.dataset.schema.declared_feature_count != res.dataset.schema.features.size()) {
    throw Error(ErrorCode::InvalidSchema, "feature count after deduplication (" +
                                              std::to_string(res.dataset.schema.features.size()) +
                                              ") differs from the declared count");
  }
  return res;
}

std::size_t internal_test_size(std::size_t n_internal, double test_fraction) {
  return static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n_internal) + 0.5));
}

SplitBundle make_splits(const Dataset& ds, const std::string& external_hospital, double test_fraction,
                        std::size_t zsc_size, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test_fraction must be in (0, 1)");
  }
  SplitBundle b;
  b.seed = seed;
  std::vector<std::size_t> internal;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.hospital[i] == external_hospital) b.external_rows.push_back(i);
    else internal.push_back(i);
  }
  if (b.external_rows.empty()) {
    throw Error(ErrorCode::HospitalNotFound, "no rows from hospital '" + external_hospital + "'");
  }
  const auto n_test = internal_test_size(internal.size(), test_fraction);
  if (zsc_size > n_test) {
    throw Error(ErrorCode::ZscTooLarge, "zsc_size " + std::to_string(zsc_size) + " exceeds internal test size " +
                                            std::to_string(n_test));
  }
  Rng rng(seed);
  shuffle(internal, rng);
  b.internal_test_rows.assign(internal.begin(), internal.begin() + static_cast<std::ptrdiff_t>(n_test));
  b.train_rows.assign(internal.begin() + static_cast<std::ptrdiff_t>(n_test), internal.end());

  Rng zrng(derive_seed(seed, 1));
  auto pool = b.internal_test_rows;
  shuffle(pool, zrng);
  b.zsc_rows.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(zsc_size));

  for (auto* v : {&b.train_rows, &b.internal_test_rows, &b.zsc_rows}) std::sort(v->begin(), v->end());
  b.train = ds.subset(b.train_rows);
  b.internal_test = ds.subset(b.internal_test_rows);
  b.external = ds.subset(b.external_rows);
  b.zsc_subset = ds.subset(b.zsc_rows);
  return b;
}

nlohmann::json split_indices_json(const SplitBundle& b) {
  return {{"seed", b.seed},
          {"train", b.train_rows},
          {"internal_test", b.internal_test_rows},
          {"external", b.external_rows},
          {"zsc_subset", b.zsc_rows}};
}

SplitBundle splits_from_indices(const Dataset& ds, const nlohmann::json& j) {
  SplitBundle b;
  b.seed = j.at("seed").get<std::uint64_t>();
  b.train_rows = j.at("train").get<std::vector<std::size_t>>();
  b.internal_test_rows = j.at("internal_test").get<std::vector<std::size_t>>();
  b.external_rows = j.at("external").get<std::vector<std::size_t>>();
  b.zsc_rows = j.at("zsc_subset").get<std::vector<std::size_t>>();
  for (const auto* v : {&b.train_rows, &b.internal_test_rows, &b.external_rows, &b.zsc_rows}) {
    for (auto i : *v) {
      if (i >= ds.n()) throw Error(ErrorCode::FormatError, "split index out of range");
    }
  }
  b.train = ds.subset(b.train_rows);
  b.internal_test = ds.subset(b.internal_test_rows);
  b.external = ds.subset(b.external_rows);
  b.zsc_subset = ds.subset(b.zsc_rows);
  return b;
}

}  // namespace mortpred
