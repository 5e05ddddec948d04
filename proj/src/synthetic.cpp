#include "modunet/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "modunet/rng.hpp"

namespace modunet {

namespace {

using Vec3 = std::array<double, 3>;

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

}  // namespace

SyntheticVolume make_synthetic(const SyntheticOptions& o) {
  if (o.width == 0 || o.height == 0 || o.depth == 0) throw VolumeError("synthetic volume needs positive extents");
  Rng rng(o.seed, 7);
  SyntheticVolume v;
  v.labels = LabelVolume(o.width, o.height, o.depth, 0);
  const Vec3 extent{static_cast<double>(o.width), static_cast<double>(o.height), static_cast<double>(o.depth)};
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  for (std::size_t f = 0; f < o.fibers; ++f) {
    const Vec3 p{range(0, extent[0]), range(0, extent[1]), range(0, extent[2])};
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(dot3(d, d));
    for (auto& c : d) c /= n;
    const double r = range(o.fiber_radius_min, o.fiber_radius_max);
    for (std::size_t z = 0; z < o.depth; ++z)
      for (std::size_t y = 0; y < o.height; ++y)
        for (std::size_t x = 0; x < o.width; ++x) {
          const Vec3 q{x + 0.5 - p[0], y + 0.5 - p[1], z + 0.5 - p[2]};
          const double t = dot3(q, d);
          if (dot3(q, q) - t * t < r * r) v.labels.at(x, y, z) = 1;
        }
  }

  for (std::size_t b = 0; b < o.pores; ++b) {
    const Vec3 c{range(0, extent[0]), range(0, extent[1]), range(0, extent[2])};
    const Vec3 r{range(o.pore_radius_min, o.pore_radius_max), range(o.pore_radius_min, o.pore_radius_max),
                 range(o.pore_radius_min, o.pore_radius_max)};
    const auto lo = [&](int a) { return static_cast<std::size_t>(std::max(0.0, std::floor(c[a] - r[a]))); };
    const auto hi = [&](int a) { return static_cast<std::size_t>(std::min(extent[a], std::ceil(c[a] + r[a]))); };
    for (std::size_t z = lo(2); z < hi(2); ++z)
      for (std::size_t y = lo(1); y < hi(1); ++y)
        for (std::size_t x = lo(0); x < hi(0); ++x) {
          const double dx = (x + 0.5 - c[0]) / r[0], dy = (y + 0.5 - c[1]) / r[1], dz = (z + 0.5 - c[2]) / r[2];
          if (dx * dx + dy * dy + dz * dz < 1.0 && v.labels.at(x, y, z) == 0) v.labels.at(x, y, z) = 2;
        }
  }

  v.gray = GrayVolume(o.width, o.height, o.depth, DType::U8);
  const std::array<double, 3> level{o.matrix_gray, o.fiber_gray, o.pore_gray};
  // Disjoint bands: pores [0, 84], matrix [85, 169], fibers [170, 255].
  const std::array<std::pair<double, double>, 3> band{{{85, 169}, {170, 255}, {0, 84}}};
  for (std::size_t i = 0; i < v.gray.voxels(); ++i) {
    const std::uint8_t c = v.labels.data[i];
    double g = level[c] + o.noise_std * rng.normal();
    if (o.disjoint) g = std::clamp(g, band[c].first, band[c].second);
    v.gray.data[i] = static_cast<std::uint16_t>(std::lround(std::clamp(g, 0.0, 255.0)));
  }
  return v;
}

SyntheticOptions synthetic_cube(std::size_t edge) {
  SyntheticOptions o;
  const double r = static_cast<double>(edge) / static_cast<double>(o.width);
  o.fibers = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(o.fibers) * r * r)));
  o.pores = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(o.pores) * r * r * r)));
  o.width = o.height = o.depth = edge;
  return o;
}

}  // namespace modunet
