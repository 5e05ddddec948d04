#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "modunet/keyvalue.hpp"

namespace modunet {

enum class Variant { TwoD, TwoHalfD, ThreeD };
enum class NormKind { Batch, Layer, None };
enum class Sampling { Learnable, Rigid };

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Full architecture description. A model is a deterministic function of this
/// and the initialization seed.
struct ModUNetSpec {
  Variant variant = Variant::TwoD;
  int u_depth = 3;
  int f0 = 16;
  int num_classes = 3;
  double dropout_rate = 0.1;
  double noise_std = 0.03;
  NormKind norm = NormKind::Batch;
  bool residual = true;
  bool separable = false;
  Sampling sampling = Sampling::Learnable;
  int kernel = 3;
  double batchnorm_momentum = 0.5;

  int spatial_rank() const noexcept { return variant == Variant::ThreeD ? 3 : 2; }
  std::size_t input_channels() const noexcept { return variant == Variant::TwoHalfD ? 5 : 1; }
  /// Channels after the ConvBlock at U-level `level`.
  std::size_t level_channels(int level) const noexcept { return (std::size_t{1} << level) * f0; }
  std::size_t divisor() const noexcept { return std::size_t{1} << u_depth; }
  /// Recommended training crop: (H, W) for 2D, (H, W, 5 slices) for 2.5D, (D, H, W) for 3D.
  std::vector<std::size_t> recommended_crop() const;

  void validate() const;
  bool operator==(const ModUNetSpec&) const = default;
};

ModUNetSpec default_spec(Variant variant);

std::string to_string(Variant v);
std::string to_string(NormKind n);
std::string to_string(Sampling s);
Variant parse_variant(std::string_view text);

/// Writes every field as key=value entries.
KeyValueDoc spec_to_keyvalue(const ModUNetSpec& spec);
/// Reads spec fields from `doc`, starting from the defaults of its `variant`
/// (or `fallback` when the doc has no variant). Unknown keys are ignored so a
/// single config file can also carry training keys. `kernel` accepts `3`,
/// `3x3` or `3x3x3`; a rank that disagrees with the variant is rejected.
ModUNetSpec spec_from_keyvalue(const KeyValueDoc& doc, Variant fallback = Variant::TwoD);

}  // namespace modunet
