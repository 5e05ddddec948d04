#include "modunet/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace modunet {

std::vector<std::size_t> TrainConfig::crop_shape(const ModUNetSpec& spec) const {
  std::vector<std::size_t> c = crop.empty() ? spec.recommended_crop() : crop;
  if (spec.variant == Variant::TwoHalfD && c.size() == 3) c.resize(2);  // (H, W, 5 slices)
  const std::size_t want = spec.spatial_rank() == 3 ? 3 : 2;
  if (c.size() != want) {
    throw SpecError("crop " + shape_str(c) + " needs " + std::to_string(want) + " extents for the " +
                    to_string(spec.variant) + " variant");
  }
  for (auto e : c)
    if (e == 0 || e % spec.divisor()) {
      throw SpecError("crop " + shape_str(c) + " is not divisible by 2^u_depth = " + std::to_string(spec.divisor()));
    }
  return c;
}

void TrainConfig::validate(const ModUNetSpec& spec) const {
  if (epochs < 0) throw SpecError("epochs must be >= 0");
  if (batches_per_epoch < 1) throw SpecError("batches_per_epoch must be >= 1");
  if (batch_size < 1) throw SpecError("batch_size must be >= 1");
  if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw SpecError("learning rates must be positive");
  if (decay_start >= 0 && decay_start > epochs) throw SpecError("decay_start beyond the last epoch");
  crop_shape(spec);
}

namespace {

// Shortest text that parses back to the same double.
std::string real_str(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::size_t> parse_extents(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    const auto x = text.find('x', start);
    const auto n = parse_integer(std::string_view(text).substr(start, x - start), what);
    if (n <= 0) throw SpecError(std::string(what) + " extents must be positive");
    out.push_back(static_cast<std::size_t>(n));
    if (x == std::string::npos) break;
    start = x + 1;
  }
  return out;
}

std::string extents_str(const std::vector<std::size_t>& e) {
  std::string s;
  for (std::size_t i = 0; i < e.size(); ++i) s += (i ? "x" : "") + std::to_string(e[i]);
  return s;
}

}  // namespace

KeyValueDoc train_config_to_keyvalue(const TrainConfig& cfg) {
  KeyValueDoc doc;
  doc.set("epochs", std::to_string(cfg.epochs));
  doc.set("batches_per_epoch", std::to_string(cfg.batches_per_epoch));
  doc.set("batch_size", std::to_string(cfg.batch_size));
  doc.set("lr_start", real_str(cfg.lr_start));
  doc.set("lr_end", real_str(cfg.lr_end));
  doc.set("decay_start", std::to_string(cfg.decay_start));
  if (!cfg.crop.empty()) doc.set("crop", extents_str(cfg.crop));
  doc.set("augment", cfg.augment ? "true" : "false");
  doc.set("seed", std::to_string(cfg.seed));
  return doc;
}

TrainConfig train_config_from_keyvalue(const KeyValueDoc& doc, TrainConfig c) {
  auto integer = [&](const char* key, int& field) {
    if (auto v = doc.get(key)) field = static_cast<int>(parse_integer(*v, key));
  };
  integer("epochs", c.epochs);
  integer("batches_per_epoch", c.batches_per_epoch);
  integer("batch_size", c.batch_size);
  integer("decay_start", c.decay_start);
  if (auto v = doc.get("lr_start")) c.lr_start = parse_real(*v, "lr_start");
  if (auto v = doc.get("lr_end")) c.lr_end = parse_real(*v, "lr_end");
  if (auto v = doc.get("crop")) c.crop = parse_extents(*v, "crop");
  if (auto v = doc.get("augment")) c.augment = parse_bool(*v, "augment");
  if (auto v = doc.get("seed")) {
    const auto s = parse_integer(*v, "seed");
    if (s < 0) throw SpecError("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  }
  return c;
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  const int start = cfg.decay_start < 0 ? cfg.epochs / 2 : cfg.decay_start;
  const int last = cfg.epochs - 1;
  if (epoch < start || last <= start) return cfg.lr_start;
  const double f = static_cast<double>(epoch - start) / static_cast<double>(last - start);
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * f;
}

Split split_layers(std::size_t total, const SplitSpec& s) {
  const std::size_t need = s.train + s.val + s.test + 2 * s.margin;
  if (need > total) {
    throw SpecError("split needs " + std::to_string(need) + " layers but the volume has " + std::to_string(total));
  }
  Split out;
  out.train = {0, s.train};
  out.val = {out.train.end + s.margin, out.train.end + s.margin + s.val};
  out.test = {out.val.end + s.margin, out.val.end + s.margin + s.test};
  return out;
}

SplitSpec parse_split(std::string_view text) {
  std::vector<std::size_t> v;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    const auto n = parse_integer(text.substr(start, comma - start), "split");
    if (n < 0) throw SpecError("split counts must be >= 0");
    v.push_back(static_cast<std::size_t>(n));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (v.size() != 4) throw SpecError("split must be 'train,val,test,margin'");
  return {v[0], v[1], v[2], v[3]};
}

Crop extract_crop(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                  const std::vector<std::size_t>& crop_shape, std::size_t z, std::size_t y, std::size_t x) {
  const bool three_d = spec.spatial_rank() == 3;
  Crop c;
  c.depth = three_d ? crop_shape[0] : 1;
  c.height = crop_shape[three_d ? 1 : 0];
  c.width = crop_shape[three_d ? 2 : 1];
  c.channels = spec.input_channels();
  if (x + c.width > volume.width || y + c.height > volume.height || z + c.depth > volume.depth) {
    throw ShapeError("crop " + shape_str(crop_shape) + " at (" + std::to_string(z) + "," + std::to_string(y) + "," +
                     std::to_string(x) + ") does not fit the volume");
  }
  c.data.resize(c.depth * c.height * c.width * c.channels);
  c.labels.resize(c.depth * c.height * c.width);
  for (std::size_t dz = 0; dz < c.depth; ++dz)
    for (std::size_t dy = 0; dy < c.height; ++dy)
      for (std::size_t dx = 0; dx < c.width; ++dx) {
        const std::size_t o = (dz * c.height + dy) * c.width + dx;
        c.labels[o] = labels.at(x + dx, y + dy, z + dz);
        for (std::size_t ch = 0; ch < c.channels; ++ch) {
          const long long sz = static_cast<long long>(z + dz) + (c.channels == 5 ? static_cast<long long>(ch) - 2 : 0);
          c.data[o * c.channels + ch] = volume.normalized(volume.index(x + dx, y + dy, reflect_index(sz, volume.depth)));
        }
      }
  return c;
}

Crop sample_crop(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                 const std::vector<std::size_t>& crop_shape, LayerRange range, Rng& rng) {
  const bool three_d = spec.spatial_rank() == 3;
  const std::size_t d = three_d ? crop_shape[0] : 1;
  const std::size_t h = crop_shape[three_d ? 1 : 0], w = crop_shape[three_d ? 2 : 1];
  if (h > volume.height || w > volume.width) throw ShapeError("crop " + shape_str(crop_shape) + " larger than the volume");
  if (range.end > volume.depth || range.size() < d) {
    throw ShapeError("crop " + shape_str(crop_shape) + " does not fit layers [" + std::to_string(range.begin) + ", " +
                     std::to_string(range.end) + ")");
  }
  const std::size_t z = range.begin + rng.uniform_int(range.size() - d + 1);
  const std::size_t y = rng.uniform_int(volume.height - h + 1);
  const std::size_t x = rng.uniform_int(volume.width - w + 1);
  return extract_crop(volume, labels, spec, crop_shape, z, y, x);
}

Crop apply_transform(const Crop& in, unsigned code) {
  const bool transpose = code & 1u, flip_x = code & 2u, flip_y = code & 4u, flip_z = code & 8u;
  if (transpose && in.height != in.width) throw ShapeError("transposition needs a square crop");
  Crop out = in;
  const std::size_t H = in.height, W = in.width, C = in.channels;
  for (std::size_t z = 0; z < in.depth; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::size_t u = flip_y ? H - 1 - y : y;
        std::size_t v = flip_x ? W - 1 - x : x;
        if (transpose) std::swap(u, v);
        const std::size_t sz = flip_z ? in.depth - 1 - z : z;
        const std::size_t src = (sz * H + u) * W + v;
        const std::size_t dst = (z * H + y) * W + x;
        out.labels[dst] = in.labels[src];
        for (std::size_t c = 0; c < C; ++c) out.data[dst * C + c] = in.data[src * C + c];
      }
  return out;
}

unsigned augment(Crop& crop, Rng& rng, bool three_d) {
  unsigned code;
  if (crop.height == crop.width)
    code = static_cast<unsigned>(rng.uniform_int(8));
  else
    code = static_cast<unsigned>(rng.uniform_int(4)) << 1;  // flips only
  if (three_d && rng.uniform_int(2)) code |= 8u;
  if (code) crop = apply_transform(crop, code);
  return code;
}

Tensor<float> batch_input(const std::vector<Crop>& crops, const ModUNetSpec& spec) {
  if (crops.empty()) throw ShapeError("empty batch");
  const Crop& f = crops.front();
  Shape shape = spec.spatial_rank() == 3 ? Shape{crops.size(), f.depth, f.height, f.width, f.channels}
                                         : Shape{crops.size(), f.height, f.width, f.channels};
  Tensor<float> t(shape);
  std::size_t o = 0;
  for (const auto& c : crops) {
    if (c.data.size() != f.data.size()) throw ShapeError("crops in a batch differ in shape");
    std::copy(c.data.begin(), c.data.end(), t.ptr() + o);
    o += c.data.size();
  }
  return t;
}

OneHotBatch batch_labels(const std::vector<Crop>& crops, std::size_t classes) {
  OneHotBatch b;
  b.classes = classes;
  for (const auto& c : crops) b.labels.insert(b.labels.end(), c.labels.begin(), c.labels.end());
  return b;
}

namespace {

// Non-overlapping starts; the last crop is pulled back to end at the border.
std::vector<std::size_t> grid_starts(std::size_t extent, std::size_t crop, std::size_t offset = 0) {
  std::vector<std::size_t> s;
  if (crop > extent) return s;
  for (std::size_t p = 0; p + crop <= extent; p += crop) s.push_back(offset + p);
  if (extent % crop) s.push_back(offset + extent - crop);
  return s;
}

}  // namespace

std::vector<Crop> validation_crops(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                                   const std::vector<std::size_t>& crop_shape, LayerRange range) {
  std::vector<Crop> crops;
  if (range.empty()) return crops;
  const bool three_d = spec.spatial_rank() == 3;
  const std::size_t d = three_d ? crop_shape[0] : 1;
  const std::size_t h = crop_shape[three_d ? 1 : 0], w = crop_shape[three_d ? 2 : 1];
  const auto zs = grid_starts(range.size(), d, range.begin);
  const auto ys = grid_starts(volume.height, h), xs = grid_starts(volume.width, w);
  if (zs.empty() || ys.empty() || xs.empty()) throw ShapeError("validation layers are smaller than the crop");
  for (auto z : zs)
    for (auto y : ys)
      for (auto x : xs) crops.push_back(extract_crop(volume, labels, spec, crop_shape, z, y, x));
  return crops;
}

double validation_loss(const Model<float>& model, const std::vector<Crop>& crops, std::size_t batch_size) {
  if (crops.empty()) return std::numeric_limits<double>::quiet_NaN();
  Jacc2Accumulator acc;
  const std::size_t C = static_cast<std::size_t>(model.spec().num_classes);
  for (std::size_t i = 0; i < crops.size(); i += batch_size) {
    std::vector<Crop> part(crops.begin() + static_cast<long>(i),
                           crops.begin() + static_cast<long>(std::min(crops.size(), i + batch_size)));
    const Tensor<float> probs = model.predict(batch_input(part, model.spec()));
    acc.add(batch_labels(part, C), ProbBatch<float>{probs.data(), C});
  }
  return acc.value();
}

TrainResult train(Model<float> model, const GrayVolume& volume, const LabelVolume& labels, const TrainConfig& cfg,
                  LayerRange train_range, LayerRange val_range, const std::function<void(const HistoryRow&)>& on_epoch) {
  const ModUNetSpec& spec = model.spec();
  cfg.validate(spec);
  if (train_range.empty()) throw SpecError("training layer range is empty");
  if (volume.width != labels.width || volume.height != labels.height || volume.depth != labels.depth) {
    throw VolumeError("data and label volumes differ in shape");
  }
  const auto crop = cfg.crop_shape(spec);
  const std::size_t C = static_cast<std::size_t>(spec.num_classes);
  const bool three_d = spec.spatial_rank() == 3;

  Rng crop_rng(cfg.seed, 1);
  Rng layer_rng(cfg.seed, 2);
  AdaBelief<float> opt(cfg.optimizer);
  const auto val_crops = validation_crops(volume, labels, spec, crop, val_range);

  TrainResult result;
  result.model = model;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      std::vector<Crop> crops;
      for (int i = 0; i < cfg.batch_size; ++i) {
        crops.push_back(sample_crop(volume, labels, spec, crop, train_range, crop_rng));
        if (cfg.augment) augment(crops.back(), crop_rng, three_d);
      }
      const Tensor<float> x = batch_input(crops, spec);
      const OneHotBatch y = batch_labels(crops, C);
      Tape<float> tape;
      const Tensor<float> probs = model.forward(x, LayerMode::Train, layer_rng, &tape);
      const double loss = jacc2_loss(y, ProbBatch<float>{probs.data(), C}, false);
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.failure = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
        break;
      }
      loss_sum += loss;
      const auto g = jacc2_grad(y, ProbBatch<float>{probs.data(), C}, false);
      ModelGrads<float> grads = model.backward(tape, Tensor<float>(probs.shape(), g));
      try {
        opt.step(model.params(), grads.params, lr);
      } catch (const NonFiniteError& e) {
        result.diverged = true;
        result.failure = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
    }
    if (result.diverged) break;

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / cfg.batches_per_epoch;
    row.lr = lr;
    row.val_loss = validation_loss(model, val_crops, static_cast<std::size_t>(cfg.batch_size));
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (val_crops.empty()) {
      result.model = model;
      result.best_epoch = epoch;
    } else if (row.val_loss < result.best_val_loss) {
      result.best_val_loss = row.val_loss;
      result.best_epoch = epoch;
      result.model = model;
    }
  }
  if (val_crops.empty() && !result.history.empty()) result.best_val_loss = std::numeric_limits<double>::quiet_NaN();
  return result;
}

LabelVolume predict_layers(const Model<float>& model, const GrayVolume& volume, LayerRange range,
                           const TileOptions& options) {
  return tiled_predict_range(model, volume, 0, volume.depth, range.begin, range.end, options);
}

LabelVolume layers_of(const LabelVolume& labels, LayerRange range) {
  if (range.end > labels.depth || range.empty()) throw ShapeError("layer range outside the label volume");
  LabelVolume out(labels.width, labels.height, range.size());
  std::copy(labels.data.begin() + static_cast<long>(range.begin * labels.slice_size()),
            labels.data.begin() + static_cast<long>(range.end * labels.slice_size()), out.data.begin());
  return out;
}

ClassificationReport evaluate_layers(const Model<float>& model, const GrayVolume& volume, const LabelVolume& labels,
                                     LayerRange range, const TileOptions& options) {
  const LabelVolume pred = predict_layers(model, volume, range, options);
  const LabelVolume gt = layers_of(labels, range);
  return classification_report(pred.data, gt.data, static_cast<std::size_t>(model.spec().num_classes));
}

std::vector<std::pair<std::string, ModUNetSpec>> ablation_variants(const ModUNetSpec& base) {
  std::vector<std::pair<std::string, ModUNetSpec>> v;
  auto add = [&](const char* name, auto edit) {
    ModUNetSpec s = base;
    edit(s);
    v.emplace_back(name, s);
  };
  add("reference", [](ModUNetSpec&) {});
  add("no_dropout", [](ModUNetSpec& s) { s.dropout_rate = 0.0; });
  add("no_noise", [](ModUNetSpec& s) { s.noise_std = 0.0; });
  add("no_residual", [](ModUNetSpec& s) { s.residual = false; });
  add("no_batchnorm", [](ModUNetSpec& s) { s.norm = NormKind::None; });
  add("separable", [](ModUNetSpec& s) { s.separable = true; });
  add("rigid_sampling", [](ModUNetSpec& s) { s.sampling = Sampling::Rigid; });
  add("layernorm", [](ModUNetSpec& s) { s.norm = NormKind::Layer; });
  add("u_depth_2", [](ModUNetSpec& s) { s.u_depth = 2; });
  add("u_depth_4", [](ModUNetSpec& s) { s.u_depth = 4; });
  return v;
}

namespace {

ExperimentRow run_experiment(const std::string& name, const ModUNetSpec& spec, const GrayVolume& volume,
                             const LabelVolume& labels, const TrainConfig& cfg, LayerRange train_range,
                             const Split& split) {
  ExperimentRow row;
  row.name = name;
  row.train_layers = train_range.size();
  try {
    spec.validate();
    row.param_count = param_count(spec);
    Rng init(cfg.seed, 0);
    TrainResult r = train(Model<float>::build(spec, init), volume, labels, cfg, train_range, split.val);
    if (r.diverged) throw NonFiniteError(r.failure);
    const auto report = evaluate_layers(r.model, volume, labels, split.test);
    for (const auto& c : report.per_class) {
      row.jaccard.push_back(c.jaccard);
      row.mean_jaccard += c.jaccard / static_cast<double>(report.per_class.size());
    }
    row.ok = true;
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = e.what();
  }
  return row;
}

}  // namespace

std::vector<ExperimentRow> ablation(const ModUNetSpec& base, const GrayVolume& volume, const LabelVolume& labels,
                                    const TrainConfig& cfg, const Split& split,
                                    const std::function<void(const ExperimentRow&)>& on_row) {
  base.validate();
  std::vector<ExperimentRow> rows;
  for (const auto& [name, spec] : ablation_variants(base)) {
    rows.push_back(run_experiment(name, spec, volume, labels, cfg, split.train, split));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::vector<std::size_t> default_learning_curve_sizes() { return {1024, 324, 102, 32, 10, 3, 1}; }

std::vector<ExperimentRow> learning_curve(const ModUNetSpec& spec, const GrayVolume& volume, const LabelVolume& labels,
                                          const TrainConfig& cfg, const Split& split,
                                          const std::vector<std::size_t>& sizes,
                                          const std::function<void(const ExperimentRow&)>& on_row) {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw SpecError("learning-curve size 0");
    if (sizes[i] > split.train.size()) {
      throw SpecError("learning-curve size " + std::to_string(sizes[i]) + " exceeds the " +
                      std::to_string(split.train.size()) + " train layers");
    }
    if (i && sizes[i] >= sizes[i - 1]) throw SpecError("learning-curve sizes must be strictly descending");
  }
  std::vector<ExperimentRow> rows;
  for (auto n : sizes) {
    const LayerRange r{split.train.begin, split.train.begin + n};
    rows.push_back(run_experiment(std::to_string(n), spec, volume, labels, cfg, r, split));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

}  // namespace modunet
