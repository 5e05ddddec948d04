#include "modunet/volume.hpp"

#include <algorithm>

namespace modunet {

namespace fs = std::filesystem;

std::string to_string(DType t) { return t == DType::U8 ? "u8" : "u16"; }

DType parse_dtype(std::string_view text) {
  if (text == "u8") return DType::U8;
  if (text == "u16") return DType::U16;
  throw VolumeError("unknown dtype '" + std::string(text) + "' (expected u8 or u16)");
}

std::size_t dtype_size(DType t) { return t == DType::U8 ? 1 : 2; }
std::uint32_t dtype_max(DType t) { return t == DType::U8 ? 255u : 65535u; }

RawVolumeMeta parse_info(std::string_view text) {
  KeyValueDoc doc;
  try {
    doc = KeyValueDoc::parse(text);
  } catch (const KeyValueError& e) {
    throw VolumeError(std::string("malformed .raw.info: ") + e.what());
  }
  RawVolumeMeta meta;
  auto extent = [&](const char* key) {
    const auto v = doc.get(key);
    if (!v) throw VolumeError(std::string(".raw.info is missing required key '") + key + "'");
    long long n = 0;
    try {
      n = parse_integer(*v, key);
    } catch (const KeyValueError& e) {
      throw VolumeError(e.what());
    }
    if (n <= 0) throw VolumeError(std::string(".raw.info: ") + key + " must be positive, got " + *v);
    return static_cast<std::size_t>(n);
  };
  meta.width = extent("width");
  meta.height = extent("height");
  meta.depth = extent("depth");
  const auto dt = doc.get("dtype");
  if (!dt) throw VolumeError(".raw.info is missing required key 'dtype'");
  meta.dtype = parse_dtype(*dt);
  for (const auto& [k, v] : doc.entries())
    if (k != "width" && k != "height" && k != "depth" && k != "dtype") meta.extra.set(k, v);
  return meta;
}

std::string write_info(const RawVolumeMeta& meta) {
  KeyValueDoc doc;
  doc.set("width", std::to_string(meta.width));
  doc.set("height", std::to_string(meta.height));
  doc.set("depth", std::to_string(meta.depth));
  doc.set("dtype", to_string(meta.dtype));
  for (const auto& [k, v] : meta.extra.entries()) doc.set(k, v);
  return doc.format();
}

RawVolumeMeta read_info_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_info(text);
}

void write_info_file(const fs::path& path, const RawVolumeMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeError("cannot write " + path.string());
  out << write_info(meta);
  if (!out) throw VolumeError("write failed: " + path.string());
}

fs::path info_path_for(const fs::path& raw) { return fs::path(raw.string() + ".info"); }

RawVolumeMeta GrayVolume::meta() const {
  RawVolumeMeta m;
  m.width = width;
  m.height = height;
  m.depth = depth;
  m.dtype = dtype;
  return m;
}

namespace {

void check_file_size(const fs::path& path, std::size_t expected) {
  std::error_code ec;
  const auto actual = fs::file_size(path, ec);
  if (ec) throw VolumeError("cannot stat " + path.string() + ": " + ec.message());
  if (actual != expected) {
    throw VolumeError("size mismatch for " + path.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(actual));
  }
}

std::vector<unsigned char> read_bytes(const fs::path& path, std::size_t offset, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeError("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<unsigned char> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) throw VolumeError("short read from " + path.string());
  return buf;
}

void decode(const std::vector<unsigned char>& bytes, DType dtype, std::vector<std::uint16_t>& out) {
  if (dtype == DType::U8) {
    out.assign(bytes.begin(), bytes.end());
    return;
  }
  out.resize(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
}

void write_bytes(const fs::path& path, const unsigned char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolumeError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw VolumeError("write failed: " + path.string());
}

}  // namespace

GrayVolume read_gray(const fs::path& path, const RawVolumeMeta& meta) {
  return read_gray_slab(path, meta, 0, meta.depth);
}

GrayVolume read_gray_slab(const fs::path& path, const RawVolumeMeta& meta, std::size_t z_begin, std::size_t z_end) {
  check_file_size(path, meta.bytes());
  if (z_begin >= z_end || z_end > meta.depth) throw VolumeError("invalid layer range for " + path.string());
  GrayVolume v(meta.width, meta.height, z_end - z_begin, meta.dtype);
  const std::size_t layer_bytes = meta.width * meta.height * dtype_size(meta.dtype);
  decode(read_bytes(path, z_begin * layer_bytes, (z_end - z_begin) * layer_bytes), meta.dtype, v.data);
  return v;
}

LabelVolume read_labels(const fs::path& path, const RawVolumeMeta& meta) {
  check_file_size(path, meta.voxels());
  LabelVolume v(meta.width, meta.height, meta.depth);
  auto bytes = read_bytes(path, 0, meta.voxels());
  std::copy(bytes.begin(), bytes.end(), v.data.begin());
  return v;
}

void write_raw(const GrayVolume& volume, const fs::path& path) {
  std::vector<unsigned char> bytes(volume.voxels() * dtype_size(volume.dtype));
  if (volume.dtype == DType::U8) {
    for (std::size_t i = 0; i < volume.voxels(); ++i) {
      if (volume.data[i] > 255) throw VolumeError("u8 volume holds a value above 255");
      bytes[i] = static_cast<unsigned char>(volume.data[i]);
    }
  } else {
    for (std::size_t i = 0; i < volume.voxels(); ++i) {
      bytes[2 * i] = static_cast<unsigned char>(volume.data[i] & 0xff);
      bytes[2 * i + 1] = static_cast<unsigned char>(volume.data[i] >> 8);
    }
  }
  write_bytes(path, bytes.data(), bytes.size());
}

void write_raw(const LabelVolume& volume, const fs::path& path) {
  write_bytes(path, volume.data.data(), volume.data.size());
}

LabelWriter::LabelWriter(const fs::path& path, std::size_t width, std::size_t height)
    : path_(path), slice_(width * height), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw VolumeError("cannot write " + path.string());
}

void LabelWriter::append(const LabelVolume& slab) {
  if (slab.slice_size() != slice_) throw VolumeError("label slab does not match the output slice size");
  out_.write(reinterpret_cast<const char*>(slab.data.data()), static_cast<std::streamsize>(slab.data.size()));
  if (!out_) throw VolumeError("write failed: " + path_.string());
}

void LabelWriter::close() {
  out_.close();
  if (!out_) throw VolumeError("write failed: " + path_.string());
}

std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * static_cast<long long>(n) - 2;
  long long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < static_cast<long long>(n) ? r : period - r);
}

Tensor<float> slices_2p5d(const GrayVolume& volume, std::size_t z) {
  if (volume.voxels() == 0) throw VolumeError("slices_2p5d: empty volume");
  if (z >= volume.depth) throw VolumeError("slices_2p5d: z outside the volume");
  Tensor<float> out({1, volume.height, volume.width, 5});
  float* o = out.ptr();
  for (int k = 0; k < 5; ++k) {
    const std::size_t src = reflect_index(static_cast<long long>(z) + k - 2, volume.depth);
    const std::size_t base = src * volume.slice_size();
    for (std::size_t i = 0; i < volume.slice_size(); ++i) o[i * 5 + k] = volume.normalized(base + i);
  }
  return out;
}

}  // namespace modunet
