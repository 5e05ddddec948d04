#pragma once

// Raw gray-level / label volumes with `.raw.info` sidecars.
// Voxel (x, y, z) lives at linear offset x + width * (y + height * z); multi-byte
// samples are little-endian.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "modunet/keyvalue.hpp"
#include "modunet/tensor.hpp"

namespace modunet {

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { U8, U16 };

std::string to_string(DType t);
DType parse_dtype(std::string_view text);
std::size_t dtype_size(DType t);
std::uint32_t dtype_max(DType t);

struct RawVolumeMeta {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t depth = 0;
  DType dtype = DType::U8;
  KeyValueDoc extra;  // unknown keys, preserved in order on rewrite

  std::size_t voxels() const noexcept { return width * height * depth; }
  std::size_t bytes() const noexcept { return voxels() * dtype_size(dtype); }
  bool same_dims(const RawVolumeMeta& o) const noexcept {
    return width == o.width && height == o.height && depth == o.depth;
  }
};

RawVolumeMeta parse_info(std::string_view text);
/// Canonical form: width, height, depth, dtype, then unknown keys in input order.
std::string write_info(const RawVolumeMeta& meta);
RawVolumeMeta read_info_file(const std::filesystem::path& path);
void write_info_file(const std::filesystem::path& path, const RawVolumeMeta& meta);
/// `foo.raw` -> `foo.raw.info`
std::filesystem::path info_path_for(const std::filesystem::path& raw);

template <typename V>
struct Volume {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t depth = 0;
  std::vector<V> data;

  Volume() = default;
  Volume(std::size_t w, std::size_t h, std::size_t d, V fill = V{0})
      : width(w), height(h), depth(d), data(w * h * d, fill) {}

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + width * (y + height * z);
  }
  V& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data[index(x, y, z)]; }
  const V& at(std::size_t x, std::size_t y, std::size_t z) const noexcept { return data[index(x, y, z)]; }
  std::size_t slice_size() const noexcept { return width * height; }
  std::size_t voxels() const noexcept { return data.size(); }
};

/// Gray values are kept as raw integers; `normalized` divides by the dtype max.
struct GrayVolume : Volume<std::uint16_t> {
  DType dtype = DType::U8;

  GrayVolume() = default;
  GrayVolume(std::size_t w, std::size_t h, std::size_t d, DType t) : Volume(w, h, d), dtype(t) {}

  float normalized(std::size_t i) const noexcept {
    return static_cast<float>(static_cast<double>(data[i]) / dtype_max(dtype));
  }
  RawVolumeMeta meta() const;
};

using LabelVolume = Volume<std::uint8_t>;

GrayVolume read_gray(const std::filesystem::path& path, const RawVolumeMeta& meta);
/// Labels are always u8 regardless of the dtype recorded in `meta`.
LabelVolume read_labels(const std::filesystem::path& path, const RawVolumeMeta& meta);
/// Reads layers [z_begin, z_end) only.
GrayVolume read_gray_slab(const std::filesystem::path& path, const RawVolumeMeta& meta, std::size_t z_begin,
                          std::size_t z_end);
void write_raw(const GrayVolume& volume, const std::filesystem::path& path);
void write_raw(const LabelVolume& volume, const std::filesystem::path& path);
/// Layers of a label volume being written in order.
class LabelWriter {
 public:
  LabelWriter(const std::filesystem::path& path, std::size_t width, std::size_t height);
  void append(const LabelVolume& slab);
  void close();

 private:
  std::filesystem::path path_;
  std::size_t slice_ = 0;
  std::ofstream out_;
};

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n - 2.
std::size_t reflect_index(long long i, std::size_t n);

/// Five-channel (1, H, W, 5) image of slices z-2..z+2, reflected at the ends.
Tensor<float> slices_2p5d(const GrayVolume& volume, std::size_t z);

}  // namespace modunet
