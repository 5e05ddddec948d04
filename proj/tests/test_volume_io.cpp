#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "modunet/metrics.hpp"
#include "modunet/synthetic.hpp"
#include "modunet/tiling.hpp"
#include "test_util.hpp"

using namespace modunet;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

Model<float> small_model(Variant v, std::uint64_t seed = 1) {
  auto s = default_spec(v);
  s.f0 = 4;
  Rng rng(seed);
  return Model<float>::build(s, rng);
}

GrayVolume noise_volume(std::size_t w, std::size_t h, std::size_t d, std::uint64_t seed) {
  GrayVolume g(w, h, d, DType::U8);
  Rng rng(seed);
  for (auto& v : g.data) v = static_cast<std::uint16_t>(rng.uniform_int(256));
  return g;
}

}  // namespace

TEST_SUITE("volume_io") {

TEST_CASE(".raw.info grammar") {
  const auto m = parse_info("width=1300\nheight=1040\ndepth=300\ndtype=u8");
  CHECK(m.width == 1300);
  CHECK(m.height == 1040);
  CHECK(m.depth == 300);
  CHECK(m.dtype == DType::U8);

  const std::string messy = "# scan 12\ndtype=u16\n\nvoxel_size=0.7\ndepth=3\nwidth=4\nheight=5\n";
  const auto p = parse_info(messy);
  CHECK(write_info(p) == "width=4\nheight=5\ndepth=3\ndtype=u16\nvoxel_size=0.7\n");
  CHECK(write_info(parse_info(write_info(p))) == write_info(p));

  CHECK_THROWS_WITH_AS(parse_info("width=1\nheight=1\ndepth=1\ndtype=f32"), doctest::Contains("f32"), VolumeError);
  CHECK_THROWS_AS(parse_info("width=1\nheight=1\ndtype=u8"), VolumeError);
  CHECK_THROWS_AS(parse_info("width=0\nheight=1\ndepth=1\ndtype=u8"), VolumeError);
  CHECK(info_path_for("a/b.raw") == std::filesystem::path("a/b.raw.info"));
}

TEST_CASE("raw layout and round trips") {
  testutil::TempDir dir("vol");
  std::string bytes;
  for (char i = 0; i < 8; ++i) bytes.push_back(i);
  spit(dir / "cube.raw", bytes);
  RawVolumeMeta meta{2, 2, 2, DType::U8, {}};
  const auto g = read_gray(dir / "cube.raw", meta);
  CHECK(g.at(1, 0, 1) == 5);
  CHECK(g.at(0, 1, 0) == 2);

  write_raw(g, dir / "copy.raw");
  CHECK(slurp(dir / "copy.raw") == bytes);

  // u16, little-endian, full range
  GrayVolume w(3, 2, 2, DType::U16);
  Rng rng(3);
  for (auto& v : w.data) v = static_cast<std::uint16_t>(rng.uniform_int(65536));
  w.data[0] = 65535;
  w.data[1] = 0x0102;
  write_raw(w, dir / "w.raw");
  const auto wb = slurp(dir / "w.raw");
  CHECK(wb.size() == 24);
  CHECK(static_cast<unsigned char>(wb[2]) == 0x02);
  CHECK(static_cast<unsigned char>(wb[3]) == 0x01);
  const auto wr = read_gray(dir / "w.raw", w.meta());
  CHECK(wr.data == w.data);
  write_raw(wr, dir / "w2.raw");
  CHECK(slurp(dir / "w2.raw") == wb);

  LabelVolume l(4, 3, 2);
  for (std::size_t i = 0; i < l.voxels(); ++i) l.data[i] = static_cast<std::uint8_t>(i % 3);
  write_raw(l, dir / "l.raw");
  CHECK(read_labels(dir / "l.raw", RawVolumeMeta{4, 3, 2, DType::U8, {}}).data == l.data);

  // slabs read exactly their layers
  const auto slab = read_gray_slab(dir / "w.raw", w.meta(), 1, 2);
  CHECK(slab.depth == 1);
  CHECK(std::equal(slab.data.begin(), slab.data.end(), w.data.begin() + 6));

  spit(dir / "short.raw", bytes.substr(0, 7));
  try {
    read_gray(dir / "short.raw", meta);
    FAIL("truncated file accepted");
  } catch (const VolumeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('8') != std::string::npos);
    CHECK(msg.find('7') != std::string::npos);
  }
  CHECK_THROWS_AS(read_gray(dir / "missing.raw", meta), VolumeError);
}

TEST_CASE("normalization") {
  GrayVolume g(3, 1, 1, DType::U8);
  g.data = {0, 100, 255};
  CHECK(g.normalized(0) == 0.0f);
  CHECK(g.normalized(2) == 1.0f);
  CHECK(g.normalized(1) > g.normalized(0));
  GrayVolume h(2, 1, 1, DType::U16);
  h.data = {65535, 65534};
  CHECK(h.normalized(0) == 1.0f);
  CHECK(h.normalized(1) <= 1.0f);
}

TEST_CASE("2.5D slice windows") {
  GrayVolume g(2, 2, 6, DType::U8);
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t i = 0; i < 4; ++i) g.data[z * 4 + i] = static_cast<std::uint16_t>(10 * z + i);
  auto layer_of = [&](const Tensor<float>& t, std::size_t ch) {
    return static_cast<std::size_t>(std::lround(t[ch] * 255.0f)) / 10;
  };
  const auto mid = slices_2p5d(g, 3);
  CHECK(mid.shape() == Shape{1, 2, 2, 5});
  for (std::size_t k = 0; k < 5; ++k) CHECK(layer_of(mid, k) == k + 1);
  const auto first = slices_2p5d(g, 0), last = slices_2p5d(g, 5);
  const std::size_t lo[5] = {2, 1, 0, 1, 2}, hi[5] = {3, 4, 5, 4, 3};
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(layer_of(first, k) == lo[k]);
    CHECK(layer_of(last, k) == hi[k]);
  }
  // neighbouring interior windows share four channels
  const auto a = slices_2p5d(g, 2), b = slices_2p5d(g, 3);
  for (std::size_t k = 0; k < 4; ++k) CHECK(a[k + 1] == b[k]);
  CHECK(reflect_index(-1, 5) == 1);
  CHECK(reflect_index(5, 5) == 3);
  CHECK(reflect_index(-3, 1) == 0);
  CHECK_THROWS_AS(slices_2p5d(g, 6), VolumeError);
}

TEST_CASE("tile plans") {
  auto spec = default_spec(Variant::TwoD);
  TileOptions o;
  o.tile = {32, 32};
  o.halo = 4;
  const auto tiles = plan_tiles(70, 70, 3, spec, o, 0, 3);
  CHECK(tiles.size() == 3 * 3 * 3);
  for (const auto& t : tiles) {
    CHECK(t.window_size[1] % 8 == 0);
    CHECK(t.window_size[2] % 8 == 0);
    CHECK(t.window_size[1] >= t.core_size[1] + 8);
  }
  CHECK(default_halo(spec) == 8);
  o.tile = {30, 32};
  CHECK_THROWS_AS(plan_tiles(70, 70, 3, spec, o, 0, 3), ShapeError);
  o.tile = {32, 32};
  o.memory_budget = 100;
  CHECK_THROWS_AS(plan_tiles(70, 70, 3, spec, o, 0, 3), ShapeError);
}

TEST_CASE("tiled prediction writes every voxel exactly once") {
  const auto model = small_model(Variant::TwoD);
  const auto g = noise_volume(70, 70, 3, 1);
  std::vector<int> writes(g.voxels(), 0);
  TileOptions o;
  o.tile = {32, 32};
  o.on_probs = [&](const Tile& t, const std::vector<float>& probs) {
    CHECK(probs.size() == 3 * t.core_size[0] * t.core_size[1] * t.core_size[2]);
    for (std::size_t z = 0; z < t.core_size[0]; ++z)
      for (std::size_t y = 0; y < t.core_size[1]; ++y)
        for (std::size_t x = 0; x < t.core_size[2]; ++x)
          ++writes[g.index(t.core_begin[2] + x, t.core_begin[1] + y, t.core_begin[0] + z)];
  };
  TileStats stats;
  const auto out = tiled_predict(model, g, o, &stats);
  CHECK(out.width == 70);
  CHECK(out.height == 70);
  CHECK(out.depth == 3);
  CHECK(std::all_of(writes.begin(), writes.end(), [](int n) { return n == 1; }));
  CHECK(std::all_of(out.data.begin(), out.data.end(), [](std::uint8_t v) { return v < 3; }));
  CHECK(stats.voxels == g.voxels());
  CHECK(stats.tiles == 27);
}

TEST_CASE("one tile with no halo equals a direct forward pass") {
  const auto model = small_model(Variant::TwoD, 2);
  const auto g = noise_volume(32, 32, 1, 2);
  TileOptions o;
  o.halo = 0;
  const auto tiled = tiled_predict(model, g, o);
  Tensor<float> x({1, 32, 32, 1});
  for (std::size_t i = 0; i < g.voxels(); ++i) x[i] = g.normalized(i);
  CHECK(tiled.data == predict_labels(model.predict(x)));

  // 2.5D: the tile input is the reflected five-slice window
  const auto m25 = small_model(Variant::TwoHalfD, 3);
  const auto g25 = noise_volume(16, 16, 4, 3);
  const auto t25 = tiled_predict(m25, g25, o);
  const auto direct = predict_labels(m25.predict(slices_2p5d(g25, 0)));
  CHECK(std::equal(direct.begin(), direct.end(), t25.data.begin()));

  // 3D: a single window over the whole volume
  const auto m3 = small_model(Variant::ThreeD, 4);
  const auto g3 = noise_volume(16, 16, 16, 4);
  Tensor<float> x3({1, 16, 16, 16, 1});
  for (std::size_t i = 0; i < g3.voxels(); ++i) x3[i] = g3.normalized(i);
  CHECK(tiled_predict(m3, g3, o).data == predict_labels(m3.predict(x3)));
}

TEST_CASE("3D tiling covers odd extents") {
  const auto m3 = small_model(Variant::ThreeD, 5);
  const auto g3 = noise_volume(20, 18, 13, 5);
  TileOptions o;
  o.tile = {8, 8, 8};
  o.halo = 4;
  std::size_t written = 0;
  o.on_probs = [&](const Tile& t, const std::vector<float>&) { written += t.core_size[0] * t.core_size[1] * t.core_size[2]; };
  const auto out = tiled_predict(m3, g3, o);
  CHECK(out.depth == 13);
  CHECK(written == g3.voxels());
}

TEST_CASE("streamed file prediction equals in-memory prediction") {
  testutil::TempDir dir("stream");
  const auto model = small_model(Variant::TwoHalfD, 6);
  const auto g = noise_volume(24, 16, 11, 6);
  write_raw(g, dir / "in.raw");
  TileOptions o;
  o.tile = {16, 16};
  const auto stats = predict_file(model, dir / "in.raw", g.meta(), dir / "out.raw", o, 3);
  CHECK(stats.voxels == g.voxels());
  const auto meta = read_info_file(info_path_for(dir / "out.raw"));
  CHECK(meta.same_dims(g.meta()));
  CHECK(meta.dtype == DType::U8);
  CHECK(read_labels(dir / "out.raw", meta).data == tiled_predict(model, g, o).data);

  const auto m3 = small_model(Variant::ThreeD, 7);
  const auto g3 = noise_volume(16, 16, 20, 7);
  write_raw(g3, dir / "in3.raw");
  o.tile = {8, 16, 16};
  predict_file(m3, dir / "in3.raw", g3.meta(), dir / "out3.raw", o, 8);
  CHECK(read_labels(dir / "out3.raw", g3.meta()).data == tiled_predict(m3, g3, o).data);
}

TEST_CASE("synthetic phantom") {
  SyntheticOptions opt;
  const auto a = make_synthetic(opt), b = make_synthetic(opt);
  CHECK(a.gray.data == b.gray.data);
  CHECK(a.labels.data == b.labels.data);
  std::size_t counts[3] = {0, 0, 0};
  for (auto l : a.labels.data) counts[l]++;
  MESSAGE("phase voxels ", counts[0], " ", counts[1], " ", counts[2]);
  CHECK(counts[0] > counts[1]);
  CHECK(counts[1] > 0);
  CHECK(counts[2] > 0);
  opt.disjoint = true;
  const auto d = make_synthetic(opt);
  const auto h = class_histograms(d.gray.data, d.labels.data, 256, 3);
  CHECK(baseline_bin_zerooc(h).mean == 1.0);
}

TEST_CASE("synthetic cube scales object counts with the edge") {
  const auto full = synthetic_cube(64);
  const SyntheticOptions defaults;
  CHECK(full.fibers == defaults.fibers);
  CHECK(full.pores == defaults.pores);
  const auto half = synthetic_cube(32);
  CHECK(half.width == 32);
  CHECK(half.depth == 32);
  CHECK(half.fibers == 4);   // 14 / 4, rounded
  CHECK(half.pores == 11);   // 90 / 8, rounded
  const auto tiny = synthetic_cube(4);
  CHECK(tiny.fibers == 1);
  CHECK(tiny.pores == 1);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto o = synthetic_cube(16);
    o.seed = seed;
    std::size_t counts[3] = {0, 0, 0};
    for (auto l : make_synthetic(o).labels.data) counts[l]++;
    CHECK_MESSAGE((counts[0] > 0 && counts[1] > 0 && counts[2] > 0), "seed ", seed);
  }
}

}  // TEST_SUITE
