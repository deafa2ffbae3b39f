#include "mortpred/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "mortpred/error.hpp"

namespace mortpred::io {

std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  char c;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty()) {
          throw Error(ErrorCode::FormatError, "stray quote inside unquoted CSV field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::FormatError, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_csv(in);
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(',');
    line += csv_escape(fields[i]);
  }
  line.push_back('\n');
  return line;
}

std::string format_double(double v) {
  if (is_missing(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Json read_json(const std::filesystem::path& path) {
  const auto text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text(path)); }

void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Matrix& X, const Labels* labels, const std::string& label_name) {
  if (static_cast<Eigen::Index>(header.size()) != X.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "header width does not match matrix");
  }
  std::string out;
  auto cols = header;
  if (labels) cols.push_back(label_name);
  out += csv_line(cols);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<std::string> fields;
    fields.reserve(cols.size());
    for (Eigen::Index j = 0; j < X.cols(); ++j) fields.push_back(format_double(X(i, j)));
    if (labels) fields.push_back(std::to_string((*labels)[static_cast<std::size_t>(i)]));
    out += csv_line(fields);
  }
  write_text(path, out);
}

MatrixFile read_matrix_csv(const std::filesystem::path& path, const std::string& label_name) {
  auto rows = read_csv_file(path);
  if (rows.empty()) throw Error(ErrorCode::FormatError, path.string() + ": empty matrix file");
  MatrixFile mf;
  auto header = rows[0];
  int label_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == label_name) label_col = static_cast<int>(j);
    else mf.header.push_back(header[j]);
  }
  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  mf.X.resize(n, static_cast<Eigen::Index>(mf.header.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i) + 1];
    if (r.size() != header.size()) {
      throw Error(ErrorCode::FormatError, path.string() + ": ragged row " + std::to_string(i + 1));
    }
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (static_cast<int>(j) == label_col) {
        mf.labels.push_back(std::stoi(r[j]));
        continue;
      }
      mf.X(i, c++) = r[j].empty() ? kMissing : std::stod(r[j]);
    }
  }
  return mf;
}

Json to_json(const Matrix& X) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      if (is_missing(X(i, j))) row.push_back(nullptr);
      else row.push_back(X(i, j));
    }
    rows.push_back(std::move(row));
  }
  return {{"rows", X.rows()}, {"cols", X.cols()}, {"data", std::move(rows)}};
}

Matrix matrix_from_json(const Json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  Matrix X(r, c);
  const auto& data = j.at("data");
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& v = data.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k));
      X(i, k) = v.is_null() ? kMissing : v.get<double>();
    }
  }
  return X;
}

Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

}  // namespace mortpred::io
