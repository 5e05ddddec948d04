#include "modunet/spec.hpp"

#include <charconv>

namespace modunet {

std::vector<std::size_t> ModUNetSpec::recommended_crop() const {
  switch (variant) {
    case Variant::TwoD:
      return {160, 160};
    case Variant::TwoHalfD:
      return {160, 160, 5};
    case Variant::ThreeD:
      return {32, 32, 32};
  }
  return {};
}

void ModUNetSpec::validate() const {
  if (u_depth < 1) throw SpecError("u_depth must be >= 1");
  if (u_depth > 12) throw SpecError("u_depth is unreasonably large");
  if (f0 < 1) throw SpecError("f0 must be >= 1");
  if (num_classes < 2 || num_classes > 255) throw SpecError("num_classes must be in [2, 255]");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw SpecError("dropout_rate must be in [0, 1)");
  if (!(noise_std >= 0.0)) throw SpecError("noise_std must be >= 0");
  if (kernel < 1 || kernel % 2 == 0) throw SpecError("kernel must be a positive odd size");
  if (!(batchnorm_momentum >= 0.0 && batchnorm_momentum <= 1.0)) throw SpecError("batchnorm_momentum must be in [0, 1]");
}

ModUNetSpec default_spec(Variant variant) {
  ModUNetSpec s;
  s.variant = variant;
  return s;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::TwoD:
      return "2d";
    case Variant::TwoHalfD:
      return "2.5d";
    case Variant::ThreeD:
      return "3d";
  }
  return "?";
}

std::string to_string(NormKind n) {
  switch (n) {
    case NormKind::Batch:
      return "batch";
    case NormKind::Layer:
      return "layer";
    case NormKind::None:
      return "none";
  }
  return "?";
}

std::string to_string(Sampling s) { return s == Sampling::Learnable ? "learnable" : "rigid"; }

Variant parse_variant(std::string_view text) {
  if (text == "2d" || text == "2D") return Variant::TwoD;
  if (text == "2.5d" || text == "2.5D") return Variant::TwoHalfD;
  if (text == "3d" || text == "3D") return Variant::ThreeD;
  throw SpecError("unknown variant '" + std::string(text) + "' (expected 2d, 2.5d or 3d)");
}

namespace {

// Shortest text that parses back to the same double.
std::string real_str(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string kernel_str(const ModUNetSpec& s) {
  std::string k = std::to_string(s.kernel);
  std::string out = k;
  for (int i = 1; i < s.spatial_rank(); ++i) out += "x" + k;
  return out;
}

int parse_kernel(std::string_view text, int spatial_rank) {
  std::vector<long long> dims;
  std::size_t start = 0;
  while (true) {
    const auto x = text.find('x', start);
    dims.push_back(parse_integer(text.substr(start, x - start), "kernel"));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  if (dims.size() > 1 && dims.size() != static_cast<std::size_t>(spatial_rank)) {
    throw SpecError("kernel '" + std::string(text) + "' has rank " + std::to_string(dims.size()) +
                    " but the variant uses " + std::to_string(spatial_rank) + "D convolutions");
  }
  for (auto d : dims)
    if (d != dims.front()) throw SpecError("kernel must be isotropic, got '" + std::string(text) + "'");
  return static_cast<int>(dims.front());
}

}  // namespace

KeyValueDoc spec_to_keyvalue(const ModUNetSpec& s) {
  KeyValueDoc doc;
  doc.set("variant", to_string(s.variant));
  doc.set("u_depth", std::to_string(s.u_depth));
  doc.set("f0", std::to_string(s.f0));
  doc.set("num_classes", std::to_string(s.num_classes));
  doc.set("dropout_rate", real_str(s.dropout_rate));
  doc.set("noise_std", real_str(s.noise_std));
  doc.set("norm", to_string(s.norm));
  doc.set("residual", s.residual ? "true" : "false");
  doc.set("separable", s.separable ? "true" : "false");
  doc.set("sampling", to_string(s.sampling));
  doc.set("kernel", kernel_str(s));
  doc.set("batchnorm_momentum", real_str(s.batchnorm_momentum));
  return doc;
}

ModUNetSpec spec_from_keyvalue(const KeyValueDoc& doc, Variant fallback) {
  const auto variant_text = doc.get("variant");
  ModUNetSpec s = default_spec(variant_text ? parse_variant(*variant_text) : fallback);
  if (auto v = doc.get("u_depth")) s.u_depth = static_cast<int>(parse_integer(*v, "u_depth"));
  if (auto v = doc.get("f0")) s.f0 = static_cast<int>(parse_integer(*v, "f0"));
  if (auto v = doc.get("num_classes")) s.num_classes = static_cast<int>(parse_integer(*v, "num_classes"));
  if (auto v = doc.get("dropout_rate")) s.dropout_rate = parse_real(*v, "dropout_rate");
  if (auto v = doc.get("noise_std")) s.noise_std = parse_real(*v, "noise_std");
  if (auto v = doc.get("norm")) {
    if (*v == "batch")
      s.norm = NormKind::Batch;
    else if (*v == "layer")
      s.norm = NormKind::Layer;
    else if (*v == "none")
      s.norm = NormKind::None;
    else
      throw SpecError("unknown norm '" + *v + "'");
  }
  if (auto v = doc.get("residual")) s.residual = parse_bool(*v, "residual");
  if (auto v = doc.get("separable")) s.separable = parse_bool(*v, "separable");
  if (auto v = doc.get("sampling")) {
    if (*v == "learnable")
      s.sampling = Sampling::Learnable;
    else if (*v == "rigid")
      s.sampling = Sampling::Rigid;
    else
      throw SpecError("unknown sampling '" + *v + "'");
  }
  if (auto v = doc.get("kernel")) s.kernel = parse_kernel(*v, s.spatial_rank());
  if (auto v = doc.get("batchnorm_momentum")) s.batchnorm_momentum = parse_real(*v, "batchnorm_momentum");
  s.validate();
  return s;
}

}  // namespace modunet
