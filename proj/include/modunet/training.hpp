#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "modunet/keyvalue.hpp"
#include "modunet/metrics.hpp"
#include "modunet/model.hpp"
#include "modunet/optimizer.hpp"
#include "modunet/tiling.hpp"
#include "modunet/volume.hpp"

namespace modunet {

struct TrainConfig {
  int epochs = 200;
  int batches_per_epoch = 10;
  int batch_size = 10;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  int decay_start = -1;  // first epoch of the linear decay; -1 means epochs / 2
  /// (H, W) for 2D / 2.5D, (D, H, W) for 3D. Empty means the spec's recommended crop.
  std::vector<std::size_t> crop;
  bool augment = true;
  std::uint64_t seed = 0;
  AdaBeliefConfig optimizer;

  /// Crop shape resolved against `spec` and checked for divisibility.
  std::vector<std::size_t> crop_shape(const ModUNetSpec& spec) const;
  void validate(const ModUNetSpec& spec) const;
};

KeyValueDoc train_config_to_keyvalue(const TrainConfig& cfg);
/// Reads training keys; unknown keys are ignored (the same file may carry spec keys).
TrainConfig train_config_from_keyvalue(const KeyValueDoc& doc, TrainConfig base = {});

/// Constant lr_start before decay_start, then linear down to lr_end at the last epoch.
double lr_at_epoch(int epoch, const TrainConfig& cfg);

struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return end <= begin; }
  bool operator==(const LayerRange&) const = default;
};

struct SplitSpec {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  std::size_t margin = 0;
};

struct Split {
  LayerRange train;
  LayerRange val;
  LayerRange test;
};

/// Contiguous train, val, test ranges in that order, separated by `margin` layers.
Split split_layers(std::size_t total, const SplitSpec& spec);
/// "train,val,test,margin"
SplitSpec parse_split(std::string_view text);

/// One training example: data (depth, height, width, channels), labels (depth, height, width).
struct Crop {
  std::size_t depth = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> data;
  std::vector<std::uint8_t> labels;
};

/// Crop at a fixed origin (z, y, x). For 2D / 2.5D `z` is the target slice.
Crop extract_crop(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                  const std::vector<std::size_t>& crop_shape, std::size_t z, std::size_t y, std::size_t x);
/// Uniformly random crop whose layers (2D / 2.5D: center slice) lie in `range`.
Crop sample_crop(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                 const std::vector<std::size_t>& crop_shape, LayerRange range, Rng& rng);

/// Planar transform code: bit 0 transposes, bit 1 flips x, bit 2 flips y.
/// Bit 3 flips z (3D crops only).
Crop apply_transform(const Crop& crop, unsigned code);
/// Draws one transform (identity included) and returns its code. Non-square
/// crops only draw the shape-preserving flips.
unsigned augment(Crop& crop, Rng& rng, bool three_d);

/// Stacks crops into a model input batch and the matching labels.
Tensor<float> batch_input(const std::vector<Crop>& crops, const ModUNetSpec& spec);
OneHotBatch batch_labels(const std::vector<Crop>& crops, std::size_t classes);

/// Fixed grid of crops over the validation layers, in Infer mode.
std::vector<Crop> validation_crops(const GrayVolume& volume, const LabelVolume& labels, const ModUNetSpec& spec,
                                   const std::vector<std::size_t>& crop_shape, LayerRange range);
double validation_loss(const Model<float>& model, const std::vector<Crop>& crops, std::size_t batch_size);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when there are no validation layers
  double lr = 0.0;
};

struct TrainResult {
  Model<float> model;  // best-validation snapshot (final model without validation)
  std::vector<HistoryRow> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool diverged = false;
  std::string failure;
};

TrainResult train(Model<float> model, const GrayVolume& volume, const LabelVolume& labels, const TrainConfig& cfg,
                  LayerRange train_range, LayerRange val_range,
                  const std::function<void(const HistoryRow&)>& on_epoch = {});

/// Predicts the layers of `range` and returns the labels of those layers.
LabelVolume predict_layers(const Model<float>& model, const GrayVolume& volume, LayerRange range,
                           const TileOptions& options = {});
/// Report of model predictions against ground truth on `range`.
ClassificationReport evaluate_layers(const Model<float>& model, const GrayVolume& volume, const LabelVolume& labels,
                                     LayerRange range, const TileOptions& options = {});
LabelVolume layers_of(const LabelVolume& labels, LayerRange range);

struct ExperimentRow {
  std::string name;          // ablation variant or learning-curve size
  std::size_t train_layers = 0;
  std::size_t param_count = 0;
  std::vector<double> jaccard;  // per class, fractions
  double mean_jaccard = 0.0;
  bool ok = false;
  std::string error;
};

/// The reference spec plus its nine single-change variants, in a fixed order.
std::vector<std::pair<std::string, ModUNetSpec>> ablation_variants(const ModUNetSpec& base);

std::vector<ExperimentRow> ablation(const ModUNetSpec& base, const GrayVolume& volume, const LabelVolume& labels,
                                    const TrainConfig& cfg, const Split& split,
                                    const std::function<void(const ExperimentRow&)>& on_row = {});

std::vector<std::size_t> default_learning_curve_sizes();

/// Each size trains a fresh model on the first `size` train layers and is scored on the test range.
std::vector<ExperimentRow> learning_curve(const ModUNetSpec& spec, const GrayVolume& volume, const LabelVolume& labels,
                                          const TrainConfig& cfg, const Split& split,
                                          const std::vector<std::size_t>& sizes,
                                          const std::function<void(const ExperimentRow&)>& on_row = {});

}  // namespace modunet
