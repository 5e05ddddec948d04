#pragma once

// The one text grammar used by the tool: UTF-8 lines of `key=value`, blank
// lines ignored, '#' starts a comment line. Used for `.raw.info` sidecars,
// model/training config files and the model file header.

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace modunet {

class KeyValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::string require(std::string_view key) const;
  /// Replaces an existing value in place or appends a new entry.
  void set(std::string key, std::string value);
  bool erase(std::string_view key);

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  /// One `key=value\n` line per entry in insertion order.
  std::string format() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

long long parse_integer(std::string_view text, std::string_view what);
double parse_real(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

}  // namespace modunet
