#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/types.hpp"

namespace mortpred::io {

using Json = nlohmann::json;

// RFC 4180 style reader: quoted fields, doubled quotes, CRLF tolerated.
std::vector<std::vector<std::string>> read_csv(std::istream& in);
std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path& path);

std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view content);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Numeric matrix with header row; `extra` columns (e.g. labels) are appended.
void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Matrix& X, const Labels* labels = nullptr,
                      const std::string& label_name = "label");

struct MatrixFile {
  std::vector<std::string> header;
  Matrix X;
  Labels labels;
};

MatrixFile read_matrix_csv(const std::filesystem::path& path, const std::string& label_name = "label");

Json to_json(const Matrix& X);
Matrix matrix_from_json(const Json& j);
Json to_json(const Vector& v);
Vector vector_from_json(const Json& j);

}  // namespace mortpred::io
