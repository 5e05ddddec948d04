#pragma once

// RFC 4180 tables: one header row, CRLF line ends, fields quoted only when they
// contain a comma, quote, CR or LF.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace modunet {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string csv_field(std::string_view text);
/// Fixed-point with `digits` decimals; NaN becomes an empty field.
std::string csv_real(double v, int digits = 6);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Strict parser; every record must have as many fields as the first.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace modunet
