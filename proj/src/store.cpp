#include "stochens/store.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "stochens/errors.hpp"

namespace stochens {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_param_list(const fs::path& path, const std::vector<ParamVector>& params) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& p : params) write_params(out, p);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ParamVector> read_param_list(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<ParamVector> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    try {
      out.push_back(read_params(in));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": record " + std::to_string(out.size()) + ": " + e.what());
    }
  }
  return out;
}

namespace {

[[noreturn]] void parse_fail(const fs::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_number(const std::string& field, const fs::path& path, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    parse_fail(path, line, "not a number: '" + field + "'");
  }
  if (used != field.size()) parse_fail(path, line, "trailing characters in '" + field + "'");
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct CsvRow {
  std::size_t line;
  std::vector<std::string> fields;
};

// Reads a CSV with the given header; blank lines are skipped.
std::vector<CsvRow> read_csv(const fs::path& path,
                                               const std::string& header) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) parse_fail(path, 1, "empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) parse_fail(path, 1, "expected header '" + header + "', got '" + line + "'");
  const std::size_t n_fields = split_fields(header).size();
  std::vector<CsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != n_fields) {
      parse_fail(path, line_no, "expected " + std::to_string(n_fields) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    rows.push_back({line_no, std::move(fields)});
  }
  if (rows.empty()) parse_fail(path, line_no, "no data rows");
  return rows;
}

}  // namespace

CsvTable read_numeric_csv(const fs::path& path, const std::string& header) {
  const auto rows = read_csv(path, header);
  CsvTable t;
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().fields.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < rows[i].fields.size(); ++k) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          parse_number(rows[i].fields[k], path, rows[i].line);
    }
    t.lines.push_back(rows[i].line);
  }
  return t;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace stochens
