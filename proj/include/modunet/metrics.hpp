#pragma once

// Segmentation losses and metrics over flattened label / probability arrays.
// Labels are class ids in {0..C-1}; probability rows are contiguous, C per voxel.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace modunet {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One-hot ground truth stored compactly as class ids.
struct OneHotBatch {
  std::vector<std::uint8_t> labels;
  std::size_t classes = 0;

  std::size_t rows() const noexcept { return labels.size(); }
  /// Reads explicit one-hot rows; each row must contain exactly one 1.
  static OneHotBatch from_rows(std::span<const double> rows, std::size_t classes);
};

/// View over per-voxel probability rows.
template <typename T>
struct ProbBatch {
  std::span<const T> rows;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return classes ? rows.size() / classes : 0; }
};

/// J2 = 1 - sum_i p_i* / (N + sum_i (sum_c p_ic^2 - p_i*)), summed over every
/// voxel of the batch. Rows must sum to 1 within 1e-4 unless `validate` is false.
template <typename T>
double jacc2_loss(const OneHotBatch& y, ProbBatch<T> p, bool validate = true);
/// dJ2/dp_ic for every entry, same layout as p.rows.
template <typename T>
std::vector<T> jacc2_grad(const OneHotBatch& y, ProbBatch<T> p, bool validate = true);

/// Running numerator/denominator of J2, for accumulating over many batches.
struct Jacc2Accumulator {
  double correct = 0.0;      // sum_i p_i*
  double denominator = 0.0;  // N + sum_i (sum_c p_ic^2 - p_i*)
  template <typename T>
  void add(const OneHotBatch& y, ProbBatch<T> p);
  double value() const { return denominator > 0.0 ? 1.0 - correct / denominator : 0.0; }
};

/// |A n B| / |A u B| over two indicator masks; 1 when both sets are empty.
double jaccard_index(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct ClasswiseJaccard {
  std::vector<double> per_class;
  double mean = 0.0;
};

ClasswiseJaccard classwise_jaccard(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                   std::size_t classes);

struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // counts[g * classes + p]

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * classes + pred]; }
  std::uint64_t total() const;
  std::uint64_t support(std::size_t c) const;    // row sum
  std::uint64_t predicted(std::size_t c) const;  // column sum
  std::uint64_t trace() const;
};

enum class ConfusionNorm { Global, ByRow, ByColumn };

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t classes);
/// Percentages; an all-zero row/column normalizes to zeros.
std::vector<double> normalize_confusion(const ConfusionMatrix& cm, ConfusionNorm mode);

struct ClassScores {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double jaccard = 0.0;
  std::uint64_t support = 0;
  bool undefined = false;  // zero support or zero predictions: precision/recall reported as 0
};

/// All scores are fractions in [0,1]. Per-class accuracy is one-vs-rest
/// (TP+TN)/total; the micro row pools TP/FP/FN over classes, so micro
/// precision = recall = f1 = accuracy = trace/total. Jaccard has no micro value.
struct ClassificationReport {
  std::vector<ClassScores> per_class;
  ClassScores macro;
  ClassScores micro;
};

ClassificationReport classification_report(const ConfusionMatrix& cm);
ClassificationReport classification_report(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                           std::size_t classes);

struct ClassHistogram {
  std::size_t bins = 0;
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // counts[v * classes + c]

  std::uint64_t at(std::size_t value, std::size_t c) const { return counts[value * classes + c]; }
  std::uint64_t total() const;
  std::vector<double> class_fractions() const;
  /// Each cell divided by the total voxel count.
  std::vector<double> normalized() const;
};

ClassHistogram class_histograms(std::span<const std::uint16_t> gray, std::span<const std::uint8_t> gt,
                                std::size_t bins, std::size_t classes);

struct BaselineResult {
  std::vector<double> per_class;
  double mean = 0.0;
};

/// Every voxel gets the majority class (ties: lowest id).
BaselineResult baseline_zerooc(std::span<const double> class_fractions);
/// Each gray value gets its own majority class (ties: lowest id).
BaselineResult baseline_bin_zerooc(const ClassHistogram& hist);

std::vector<std::uint8_t> error_volume(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

}  // namespace modunet
