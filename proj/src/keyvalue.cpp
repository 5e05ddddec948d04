#include "modunet/keyvalue.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>

namespace modunet {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(std::string_view text) {
  KeyValueDoc doc;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw KeyValueError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw KeyValueError("line " + std::to_string(line_no) + ": empty key");
    if (doc.has(key)) throw KeyValueError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    doc.entries_.emplace_back(std::string(key), std::string(value));
  }
  return doc;
}

bool KeyValueDoc::has(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueDoc::get(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::string KeyValueDoc::require(std::string_view key) const {
  auto v = get(key);
  if (!v) throw KeyValueError("missing required key '" + std::string(key) + "'");
  return *v;
}

void KeyValueDoc::set(std::string key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

bool KeyValueDoc::erase(std::string_view key) {
  const auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

std::string KeyValueDoc::format() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

long long parse_integer(std::string_view text, std::string_view what) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw KeyValueError("'" + std::string(what) + "' expects an integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_real(std::string_view text, std::string_view what) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw KeyValueError("'" + std::string(what) + "' expects a number, got '" + s + "'");
  }
  return v;
}

bool parse_bool(std::string_view text, std::string_view what) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw KeyValueError("'" + std::string(what) + "' expects true/false, got '" + std::string(text) + "'");
}

}  // namespace modunet
