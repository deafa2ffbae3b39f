#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/types.hpp"

namespace mortpred {

enum class FeatureKind { Symptom, History, Demographic, Vital, Lab, Treatment };
enum class FeatureType { Numeric, Binary, Categorical };

std::string to_string(FeatureKind k);
std::string to_string(FeatureType t);
FeatureKind parse_feature_kind(const std::string& s);
FeatureType parse_feature_type(const std::string& s);

struct NormalRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Symptom;
  FeatureType dtype = FeatureType::Binary;
  std::optional<NormalRange> normal_range;
  std::string display_name;
};

/// Declarative description of the input table. Label classes are fixed as
/// survive = 0, die = 1.
struct FeatureSchema {
  std::vector<FeatureSpec> features;
  std::string label_name = "death";
  std::string hospital_column = "hospital";
  std::string id_column;  // empty: ids are generated from the row number
  std::string age_feature = "age";
  std::string sex_feature = "sex";
  double male_value = 1.0;
  std::optional<std::size_t> declared_feature_count;

  std::size_t size() const { return features.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  const FeatureSpec& at(const std::string& name) const;
  std::vector<std::string> names() const;
};

/// Throws DuplicateFeatureName / InvalidSchema.
void validate(const FeatureSchema& schema);

/// The schema config file: schema plus the split settings that travel with it.
struct SchemaFile {
  FeatureSchema schema;
  std::optional<std::string> external_hospital;
  std::optional<std::uint64_t> seed;
};

nlohmann::json to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const nlohmann::json& j);
SchemaFile load_schema_file(const std::filesystem::path& path);
void save_schema_file(const std::filesystem::path& path, const SchemaFile& file);

struct Dataset {
  FeatureSchema schema;
  Matrix rows;  // n x p, NaN marks a missing cell
  Labels labels;
  std::vector<std::string> hospital;
  std::vector<std::string> ids;

  std::size_t n() const { return labels.size(); }
  std::size_t p() const { return schema.size(); }
  Dataset subset(const std::vector<std::size_t>& idx) const;
  std::size_t missing_count() const;
};

/// Throws LengthMismatch / TypeMismatch when the invariants do not hold.
void check_invariants(const Dataset& ds);

/// Missing tokens: empty, "NA", "NaN" (case-insensitive).
bool is_missing_token(std::string_view cell);

Dataset parse_csv(std::istream& in, const FeatureSchema& schema);
Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema);
void write_csv(const std::filesystem::path& path, const Dataset& ds);

struct DedupResult {
  Dataset dataset;
  std::vector<std::string> dropped;
};

/// Drops features whose column is cell-for-cell identical to an earlier one.
DedupResult drop_duplicate_features(const Dataset& ds);

struct SplitBundle {
  Dataset train;
  Dataset internal_test;
  Dataset external;
  Dataset zsc_subset;
  std::uint64_t seed = 0;
  // Row indices into the source dataset, ascending.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> internal_test_rows;
  std::vector<std::size_t> external_rows;
  std::vector<std::size_t> zsc_rows;
};

/// internal_test size = floor(test_fraction * n_internal + 0.5).
std::size_t internal_test_size(std::size_t n_internal, double test_fraction);

SplitBundle make_splits(const Dataset& ds, const std::string& external_hospital,
                        double test_fraction, std::size_t zsc_size, std::uint64_t seed);

nlohmann::json split_indices_json(const SplitBundle& b);
SplitBundle splits_from_indices(const Dataset& ds, const nlohmann::json& j);

}  // namespace mortpred
