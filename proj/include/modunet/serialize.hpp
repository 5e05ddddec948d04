#pragma once

// Model files: a "MODUNET1" line, a key=value header (format_version plus every
// spec field) closed by a blank line, the float32 little-endian parameter blobs
// in build order, then the running statistics, then an FNV-1a 64-bit checksum of
// all preceding bytes.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "modunet/model.hpp"

namespace modunet {

class ModelFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kModelFormatVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

std::string serialize_model(const Model<float>& model);
Model<float> deserialize_model(std::string_view bytes);

void save_model(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_model(const std::filesystem::path& path);

}  // namespace modunet
