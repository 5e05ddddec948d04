#pragma once

// Whole-volume inference by overlapping tiles. Each tile core is extended by a
// halo on every side (reflect-padded at the volume border), the window is
// rounded up to the model divisor, predicted in Infer mode, and only the core is
// written back. 2D / 2.5D models tile each XY slice; 3D models tile all axes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "modunet/model.hpp"
#include "modunet/volume.hpp"

namespace modunet {

/// Axis order in tiles is (z, y, x).
struct Tile {
  std::array<std::size_t, 3> core_begin{};
  std::array<std::size_t, 3> core_size{};
  std::array<long long, 3> window_begin{};
  std::array<std::size_t, 3> window_size{};

  std::size_t window_voxels() const noexcept { return window_size[0] * window_size[1] * window_size[2]; }
};

struct TileOptions {
  /// Core extents: (H, W) for 2D / 2.5D, (D, H, W) for 3D. Empty means one tile
  /// per slice (or per volume in 3D).
  std::vector<std::size_t> tile;
  long long halo = -1;            // -1 picks default_halo(spec)
  std::size_t memory_budget = 0;  // max voxels in one input window; 0 = unlimited
  /// Called once per tile (serialized) with the core's probabilities, C per voxel, x fastest.
  std::function<void(const Tile&, const std::vector<float>&)> on_probs;
};

struct TileStats {
  std::size_t tiles = 0;
  std::size_t voxels = 0;
  double seconds = 0.0;
  double voxels_per_second() const { return seconds > 0.0 ? static_cast<double>(voxels) / seconds : 0.0; }
};

/// 2^u_depth * kernel radius.
std::size_t default_halo(const ModUNetSpec& spec);

/// Tiles covering layers [z_begin, z_end) of a width x height x depth volume.
std::vector<Tile> plan_tiles(std::size_t width, std::size_t height, std::size_t depth, const ModUNetSpec& spec,
                             const TileOptions& options, std::size_t z_begin, std::size_t z_end);

LabelVolume tiled_predict(const Model<float>& model, const GrayVolume& volume, const TileOptions& options,
                          TileStats* stats = nullptr);

/// Tiled prediction of layers [z_begin, z_end) of a volume whose layers
/// [source_z0, source_z0 + source.depth) are held in `source`. The source must
/// contain every layer the tiles read after reflection against `full_depth`.
LabelVolume tiled_predict_range(const Model<float>& model, const GrayVolume& source, std::size_t source_z0,
                                std::size_t full_depth, std::size_t z_begin, std::size_t z_end,
                                const TileOptions& options, TileStats* stats = nullptr);

/// Layer range [first, last) that the tiles read, after reflection.
std::pair<std::size_t, std::size_t> source_layers(const std::vector<Tile>& tiles, const ModUNetSpec& spec,
                                                  std::size_t full_depth);

/// Streams a `.raw` file through tiled prediction slab by slab and writes the
/// label `.raw` plus its sidecar. `slab_layers` is rounded to the tile depth for 3D.
TileStats predict_file(const Model<float>& model, const std::filesystem::path& input, const RawVolumeMeta& meta,
                       const std::filesystem::path& output, const TileOptions& options, std::size_t slab_layers = 16);

}  // namespace modunet
