#include "modunet/tiling.hpp"

#include <algorithm>
#include <chrono>

namespace modunet {

std::size_t default_halo(const ModUNetSpec& spec) {
  return spec.divisor() * static_cast<std::size_t>(spec.kernel / 2);
}

namespace {

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

std::size_t resolve_halo(const ModUNetSpec& spec, const TileOptions& o) {
  return o.halo < 0 ? default_halo(spec) : static_cast<std::size_t>(o.halo);
}

}  // namespace

std::vector<Tile> plan_tiles(std::size_t width, std::size_t height, std::size_t depth, const ModUNetSpec& spec,
                             const TileOptions& options, std::size_t z_begin, std::size_t z_end) {
  if (width == 0 || height == 0 || depth == 0) throw VolumeError("cannot tile an empty volume");
  if (z_begin >= z_end || z_end > depth) throw VolumeError("tiling layer range outside the volume");
  const bool three_d = spec.spatial_rank() == 3;
  const std::size_t div = spec.divisor();
  const std::size_t halo = resolve_halo(spec, options);

  std::array<std::size_t, 3> core{three_d ? z_end - z_begin : 1, height, width};
  if (!options.tile.empty()) {
    const std::size_t want = three_d ? 3 : 2;
    if (options.tile.size() != want) {
      throw ShapeError("tile shape " + shape_str(options.tile) + " needs " + std::to_string(want) + " extents");
    }
    for (std::size_t a = 0; a < want; ++a) {
      if (options.tile[a] == 0 || options.tile[a] % div) {
        throw ShapeError("tile shape " + shape_str(options.tile) + " is not divisible by " + std::to_string(div));
      }
      core[three_d ? a : a + 1] = options.tile[a];
    }
  }

  const std::array<std::size_t, 3> lo{z_begin, 0, 0};
  const std::array<std::size_t, 3> hi{z_end, height, width};
  std::array<std::vector<std::pair<std::size_t, std::size_t>>, 3> spans;
  for (int a = 0; a < 3; ++a)
    for (std::size_t b = lo[a]; b < hi[a]; b += core[a]) spans[a].push_back({b, std::min(core[a], hi[a] - b)});

  std::vector<Tile> tiles;
  for (const auto& [zb, zs] : spans[0])
    for (const auto& [yb, ys] : spans[1])
      for (const auto& [xb, xs] : spans[2]) {
        Tile t;
        t.core_begin = {zb, yb, xb};
        t.core_size = {zs, ys, xs};
        for (int a = 0; a < 3; ++a) {
          const bool tiled_axis = a > 0 || three_d;
          const std::size_t h = tiled_axis ? halo : 0;
          t.window_begin[a] = static_cast<long long>(t.core_begin[a]) - static_cast<long long>(h);
          t.window_size[a] = tiled_axis ? round_up(t.core_size[a] + 2 * h, div) : 1;
        }
        if (options.memory_budget && t.window_voxels() > options.memory_budget) {
          throw ShapeError("tile window of " + std::to_string(t.window_voxels()) + " voxels exceeds the budget of " +
                           std::to_string(options.memory_budget));
        }
        tiles.push_back(t);
      }
  return tiles;
}

std::pair<std::size_t, std::size_t> source_layers(const std::vector<Tile>& tiles, const ModUNetSpec& spec,
                                                  std::size_t full_depth) {
  std::size_t first = full_depth, last = 0;
  for (const auto& t : tiles) {
    long long a = t.window_begin[0], b = a + static_cast<long long>(t.window_size[0]);
    if (spec.variant == Variant::TwoHalfD) {
      a -= 2;
      b += 2;
    }
    for (long long z = a; z < b; ++z) {
      const std::size_t r = reflect_index(z, full_depth);
      first = std::min(first, r);
      last = std::max(last, r + 1);
    }
  }
  return {first, last};
}

namespace {

Tensor<float> gather_window(const GrayVolume& src, std::size_t src_z0, std::size_t full_depth, const Tile& t,
                            const ModUNetSpec& spec) {
  const std::size_t wd = t.window_size[0], wh = t.window_size[1], ww = t.window_size[2];
  const std::size_t ch = spec.input_channels();
  Shape shape = spec.spatial_rank() == 3 ? Shape{1, wd, wh, ww, ch} : Shape{1, wh, ww, ch};
  Tensor<float> out(shape);
  float* o = out.ptr();
  std::vector<std::size_t> xs(ww), ys(wh);
  for (std::size_t x = 0; x < ww; ++x) xs[x] = reflect_index(t.window_begin[2] + static_cast<long long>(x), src.width);
  for (std::size_t y = 0; y < wh; ++y) ys[y] = reflect_index(t.window_begin[1] + static_cast<long long>(y), src.height);
  const long long z_shift = spec.variant == Variant::TwoHalfD ? -2 : 0;
  for (std::size_t z = 0; z < wd; ++z) {
    for (std::size_t c = 0; c < ch; ++c) {
      const long long gz = t.window_begin[0] + static_cast<long long>(z) + z_shift + static_cast<long long>(c);
      const std::size_t rz = reflect_index(gz, full_depth);
      if (rz < src_z0 || rz >= src_z0 + src.depth) throw VolumeError("tile reads a layer outside the loaded slab");
      const std::size_t lz = rz - src_z0;
      for (std::size_t y = 0; y < wh; ++y)
        for (std::size_t x = 0; x < ww; ++x) o[((z * wh + y) * ww + x) * ch + c] = src.normalized(src.index(xs[x], ys[y], lz));
    }
  }
  return out;
}

}  // namespace

LabelVolume tiled_predict_range(const Model<float>& model, const GrayVolume& source, std::size_t source_z0,
                                std::size_t full_depth, std::size_t z_begin, std::size_t z_end,
                                const TileOptions& options, TileStats* stats) {
  const auto start = std::chrono::steady_clock::now();
  const ModUNetSpec& spec = model.spec();
  const auto tiles = plan_tiles(source.width, source.height, full_depth, spec, options, z_begin, z_end);
  LabelVolume out(source.width, source.height, z_end - z_begin);
  const std::size_t C = static_cast<std::size_t>(spec.num_classes);
  const long long n = static_cast<long long>(tiles.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    try {
      const Tile& t = tiles[static_cast<std::size_t>(i)];
      const Tensor<float> probs = model.predict(gather_window(source, source_z0, full_depth, t, spec));
      const std::size_t wh = t.window_size[1], ww = t.window_size[2];
      std::array<std::size_t, 3> off;
      for (int a = 0; a < 3; ++a) off[a] = static_cast<std::size_t>(static_cast<long long>(t.core_begin[a]) - t.window_begin[a]);
      std::vector<float> core_probs;
      if (options.on_probs) core_probs.reserve(t.core_size[0] * t.core_size[1] * t.core_size[2] * C);
      for (std::size_t z = 0; z < t.core_size[0]; ++z)
        for (std::size_t y = 0; y < t.core_size[1]; ++y)
          for (std::size_t x = 0; x < t.core_size[2]; ++x) {
            const std::size_t w = ((z + off[0]) * wh + (y + off[1])) * ww + (x + off[2]);
            const float* row = probs.ptr() + w * C;
            std::size_t best = 0;
            for (std::size_t c = 1; c < C; ++c)
              if (row[c] > row[best]) best = c;
            out.at(t.core_begin[2] + x, t.core_begin[1] + y, t.core_begin[0] + z - z_begin) =
                static_cast<std::uint8_t>(best);
            if (options.on_probs) core_probs.insert(core_probs.end(), row, row + C);
          }
      if (options.on_probs) {
#pragma omp critical(modunet_on_probs)
        options.on_probs(t, core_probs);
      }
    } catch (...) {
#pragma omp critical(modunet_tile_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  if (stats) {
    stats->tiles += tiles.size();
    stats->voxels += out.voxels();
    stats->seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return out;
}

LabelVolume tiled_predict(const Model<float>& model, const GrayVolume& volume, const TileOptions& options,
                          TileStats* stats) {
  return tiled_predict_range(model, volume, 0, volume.depth, 0, volume.depth, options, stats);
}

TileStats predict_file(const Model<float>& model, const std::filesystem::path& input, const RawVolumeMeta& meta,
                       const std::filesystem::path& output, const TileOptions& options, std::size_t slab_layers) {
  const ModUNetSpec& spec = model.spec();
  std::size_t slab = std::max<std::size_t>(slab_layers, 1);
  if (spec.spatial_rank() == 3) {
    const std::size_t td = options.tile.empty() ? meta.depth : options.tile[0];
    slab = round_up(slab, td);
  }
  TileStats stats;
  LabelWriter writer(output, meta.width, meta.height);
  for (std::size_t z0 = 0; z0 < meta.depth; z0 += slab) {
    const std::size_t z1 = std::min(meta.depth, z0 + slab);
    const auto tiles = plan_tiles(meta.width, meta.height, meta.depth, spec, options, z0, z1);
    const auto [first, last] = source_layers(tiles, spec, meta.depth);
    const GrayVolume source = read_gray_slab(input, meta, first, last);
    writer.append(tiled_predict_range(model, source, first, meta.depth, z0, z1, options, &stats));
  }
  writer.close();
  RawVolumeMeta out_meta;
  out_meta.width = meta.width;
  out_meta.height = meta.height;
  out_meta.depth = meta.depth;
  out_meta.dtype = DType::U8;
  write_info_file(info_path_for(output), out_meta);
  return stats;
}

}  // namespace modunet
