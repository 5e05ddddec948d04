#include "modunet/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace modunet {

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_real(double v, int digits) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw CsvError("row has " + std::to_string(row.size()) + " fields, header has " + std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + csv_field(r[i]);
    out += "\r\n";
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CsvError("cannot write " + path.string());
  out << str();
  if (!out) throw CsvError("write failed: " + path.string());
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  std::size_t i = 0;
  auto end_record = [&] {
    rec.push_back(std::move(field));
    field.clear();
    if (!records.empty() && rec.size() != records.front().size()) throw CsvError("ragged CSV record");
    records.push_back(std::move(rec));
    rec.clear();
  };
  while (i < text.size()) {
    if (text[i] == '"') {
      if (!field.empty()) throw CsvError("quote inside an unquoted field");
      ++i;
      while (true) {
        if (i >= text.size()) throw CsvError("unterminated quoted field");
        if (text[i] == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            field += '"';
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        field += text[i++];
      }
      if (i < text.size() && text[i] != ',' && text[i] != '\r') throw CsvError("garbage after a quoted field");
      continue;
    }
    if (text[i] == ',') {
      rec.push_back(std::move(field));
      field.clear();
      ++i;
    } else if (text[i] == '\r') {
      if (i + 1 >= text.size() || text[i + 1] != '\n') throw CsvError("bare CR in CSV");
      end_record();
      i += 2;
    } else if (text[i] == '\n') {
      throw CsvError("bare LF in CSV (records end with CRLF)");
    } else {
      field += text[i++];
    }
  }
  if (!field.empty() || !rec.empty()) end_record();
  return records;
}

}  // namespace modunet
