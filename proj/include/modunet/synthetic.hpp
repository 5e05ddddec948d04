#pragma once

// Three-phase synthetic phantoms: a matrix background (0), straight rods as
// fibers (1) and ellipsoidal blobs as pores (2), with Gaussian gray noise.

#include <cstdint>

#include "modunet/volume.hpp"

namespace modunet {

struct SyntheticOptions {
  std::size_t width = 64;
  std::size_t height = 64;
  std::size_t depth = 64;
  std::uint64_t seed = 1;
  std::size_t fibers = 14;
  double fiber_radius_min = 4.0;
  double fiber_radius_max = 6.0;
  std::size_t pores = 90;
  double pore_radius_min = 3.0;
  double pore_radius_max = 7.0;
  double matrix_gray = 115.0;
  double fiber_gray = 165.0;
  double pore_gray = 55.0;
  double noise_std = 22.0;
  /// Clamp each phase's noisy gray values into its own band so the phases never overlap.
  bool disjoint = false;
};

struct SyntheticVolume {
  GrayVolume gray;
  LabelVolume labels;
};

SyntheticVolume make_synthetic(const SyntheticOptions& options);

/// Defaults for an `edge`^3 cube with the default phase mix: fiber count scales
/// with the cross-section, pore count with the volume (at least one of each).
SyntheticOptions synthetic_cube(std::size_t edge);

}  // namespace modunet
