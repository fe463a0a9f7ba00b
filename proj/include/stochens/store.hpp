#ifndef STOCHENS_STORE_HPP
#define STOCHENS_STORE_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stochens/tensor_net.hpp"

namespace stochens {

namespace fs = std::filesystem;

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// JSON with two-space indentation and a trailing newline.
void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

/// Concatenated ParamVector records (each with its own header line).
void write_param_list(const fs::path& path, const std::vector<ParamVector>& params);
std::vector<ParamVector> read_param_list(const fs::path& path);

struct CsvTable {
  Matrix values;                   // one row per data line
  std::vector<std::size_t> lines;  // 1-based source line of each row
};

/// Numeric CSV with an exact header line. Blank lines are skipped; malformed
/// rows and empty files raise ParseError carrying "path:line".
CsvTable read_numeric_csv(const fs::path& path, const std::string& header);

/// Shortest round-trip decimal form of a double ("%.17g").
std::string format_double(double v);

}  // namespace stochens

#endif  // STOCHENS_STORE_HPP
