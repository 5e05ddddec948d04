#include "modunet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace modunet {

namespace {

constexpr std::string_view kMagic = "MODUNET1\n";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
  return v;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::string buf(1 << 16, '\0');
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return h;
}

std::string serialize_model(const Model<float>& model) {
  KeyValueDoc header;
  header.set("format_version", std::to_string(kModelFormatVersion));
  const KeyValueDoc spec = spec_to_keyvalue(model.spec());
  for (const auto& [k, v] : spec.entries()) header.set(k, v);
  header.set("param_tensors", std::to_string(model.params().size()));
  header.set("stat_tensors", std::to_string(model.stats().size()));

  std::string out(kMagic);
  out += header.format();
  out += "\n";
  auto blob = [&](const Tensor<float>& t) {
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  };
  for (const auto& p : model.params()) blob(p.value);
  for (const auto& s : model.stats()) blob(s.value);
  put_u64(out, fnv1a64(out));
  return out;
}

Model<float> deserialize_model(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw ModelFileError("not a model file (bad magic)");
  const auto header_end = bytes.find("\n\n", kMagic.size() - 1);
  if (header_end == std::string_view::npos) throw ModelFileError("truncated model file: header never ends");
  const std::string_view header_text = bytes.substr(kMagic.size(), header_end + 1 - kMagic.size());
  KeyValueDoc header;
  try {
    header = KeyValueDoc::parse(header_text);
  } catch (const KeyValueError& e) {
    throw ModelFileError(std::string("malformed model header: ") + e.what());
  }
  const auto version = header.get("format_version");
  if (!version) throw ModelFileError("model header lacks format_version");
  if (*version != std::to_string(kModelFormatVersion)) {
    throw ModelFileError("model format version " + *version + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
  }
  ModUNetSpec spec;
  try {
    spec = spec_from_keyvalue(header);
  } catch (const std::exception& e) {
    throw ModelFileError(std::string("invalid spec in model header: ") + e.what());
  }
  Model<float> model = Model<float>::skeleton(spec);
  std::size_t floats = 0;
  for (const auto& p : model.params()) floats += p.value.size();
  for (const auto& s : model.stats()) floats += s.value.size();

  const std::size_t body = header_end + 2;
  const std::size_t expected = body + 4 * floats + 8;
  if (bytes.size() < expected) {
    throw ModelFileError("truncated model file: expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) throw ModelFileError("model file has trailing bytes");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (get_u64(raw + expected - 8) != fnv1a64(bytes.substr(0, expected - 8))) {
    throw ModelFileError("model file checksum mismatch");
  }
  if (header.get("param_tensors") != std::to_string(model.params().size()) ||
      header.get("stat_tensors") != std::to_string(model.stats().size())) {
    throw ModelFileError("model header tensor counts do not match the spec");
  }
  const unsigned char* p = raw + body;
  auto fill = [&](Tensor<float>& t) {
    for (auto& v : t.storage()) {
      v = std::bit_cast<float>(get_u32(p));
      p += 4;
    }
  };
  for (auto& t : model.params()) fill(t.value);
  for (auto& t : model.stats()) fill(t.value);
  return model;
}

void save_model(const Model<float>& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFileError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFileError("write failed: " + path.string());
}

Model<float> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFileError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace modunet
