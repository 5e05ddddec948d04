#include "modunet/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace modunet {

namespace {

template <typename T>
void check_batch(const OneHotBatch& y, ProbBatch<T> p, bool validate) {
  if (p.classes != y.classes || p.classes == 0) throw MetricError("jacc2: class count mismatch");
  if (p.rows.size() != y.rows() * y.classes) {
    throw MetricError("jacc2: " + std::to_string(y.rows()) + " label rows but " + std::to_string(p.size()) +
                      " probability rows");
  }
  if (!validate) return;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    if (y.labels[i] >= y.classes) throw MetricError("jacc2: label outside {0..C-1}");
    double sum = 0.0;
    for (std::size_t c = 0; c < p.classes; ++c) {
      const double v = p.rows[i * p.classes + c];
      if (!(v >= -1e-4 && v <= 1.0 + 1e-4)) throw MetricError("jacc2: probability outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      throw MetricError("jacc2: probability row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }
}

template <typename T>
void jacc2_terms(const OneHotBatch& y, ProbBatch<T> p, double& correct, double& denom) {
  const std::size_t C = p.classes;
  double sq = 0.0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    const T* row = p.rows.data() + i * C;
    const double star = row[y.labels[i]];
    for (std::size_t c = 0; c < C; ++c) sq += static_cast<double>(row[c]) * row[c];
    correct += star;
    sq -= star;
  }
  denom += static_cast<double>(y.rows()) + sq;
}

void check_pair(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t classes) {
  if (pred.size() != gt.size()) {
    throw MetricError("shape mismatch: " + std::to_string(pred.size()) + " predicted voxels vs " +
                      std::to_string(gt.size()) + " ground-truth voxels");
  }
  if (classes == 0) throw MetricError("class count must be positive");
}

double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

}  // namespace

OneHotBatch OneHotBatch::from_rows(std::span<const double> rows, std::size_t classes) {
  if (classes == 0 || rows.size() % classes) throw MetricError("one-hot rows do not divide by class count");
  OneHotBatch b;
  b.classes = classes;
  b.labels.resize(rows.size() / classes);
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    int ones = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = rows[i * classes + c];
      if (v == 1.0) {
        ++ones;
        b.labels[i] = static_cast<std::uint8_t>(c);
      } else if (v != 0.0) {
        throw MetricError("one-hot row " + std::to_string(i) + " has a non-binary entry");
      }
    }
    if (ones != 1) throw MetricError("one-hot row " + std::to_string(i) + " must contain exactly one 1");
  }
  return b;
}

template <typename T>
double jacc2_loss(const OneHotBatch& y, ProbBatch<T> p, bool validate) {
  check_batch(y, p, validate);
  double correct = 0.0, denom = 0.0;
  jacc2_terms(y, p, correct, denom);
  return denom > 0.0 ? 1.0 - correct / denom : 0.0;
}

template <typename T>
std::vector<T> jacc2_grad(const OneHotBatch& y, ProbBatch<T> p, bool validate) {
  check_batch(y, p, validate);
  double S = 0.0, D = 0.0;
  jacc2_terms(y, p, S, D);
  const std::size_t C = p.classes;
  std::vector<T> g(p.rows.size());
  const double inv_d2 = 1.0 / (D * D);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double yic = y.labels[i] == c ? 1.0 : 0.0;
      const double pic = p.rows[i * C + c];
      // d/dp of 1 - S/D by the quotient rule: dS = y, dD = 2p - y
      g[i * C + c] = static_cast<T>(-(yic * D - S * (2.0 * pic - yic)) * inv_d2);
    }
  }
  return g;
}

template <typename T>
void Jacc2Accumulator::add(const OneHotBatch& y, ProbBatch<T> p) {
  check_batch(y, p, false);
  jacc2_terms(y, p, correct, denominator);
}

double jaccard_index(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw MetricError("jaccard_index: domain mismatch");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ClasswiseJaccard classwise_jaccard(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                   std::size_t classes) {
  const ConfusionMatrix cm = confusion(pred, gt, classes);
  ClasswiseJaccard out;
  for (std::size_t c = 0; c < classes; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double uni = static_cast<double>(cm.support(c) + cm.predicted(c)) - tp;
    out.per_class.push_back(uni > 0.0 ? tp / uni : 1.0);
  }
  for (double j : out.per_class) out.mean += j;
  out.mean /= static_cast<double>(classes);
  return out;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t p = 0; p < classes; ++p) t += at(c, p);
  return t;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t c) const {
  std::uint64_t t = 0;
  for (std::size_t g = 0; g < classes; ++g) t += at(g, c);
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < classes; ++c) t += at(c, c);
  return t;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t classes) {
  check_pair(pred, gt, classes);
  ConfusionMatrix cm;
  cm.classes = classes;
  cm.counts.assign(classes * classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= classes || pred[i] >= classes) {
      throw MetricError("label " + std::to_string(std::max(gt[i], pred[i])) + " outside {0.." +
                        std::to_string(classes - 1) + "}");
    }
    ++cm.counts[gt[i] * classes + pred[i]];
  }
  return cm;
}

std::vector<double> normalize_confusion(const ConfusionMatrix& cm, ConfusionNorm mode) {
  const std::size_t C = cm.classes;
  std::vector<double> out(C * C, 0.0);
  const double total = static_cast<double>(cm.total());
  for (std::size_t g = 0; g < C; ++g)
    for (std::size_t p = 0; p < C; ++p) {
      double denom = total;
      if (mode == ConfusionNorm::ByRow) denom = static_cast<double>(cm.support(g));
      if (mode == ConfusionNorm::ByColumn) denom = static_cast<double>(cm.predicted(p));
      out[g * C + p] = 100.0 * safe_div(static_cast<double>(cm.at(g, p)), denom);
    }
  return out;
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t C = cm.classes;
  const double total = static_cast<double>(cm.total());
  ClassificationReport r;
  for (std::size_t c = 0; c < C; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double support = static_cast<double>(cm.support(c));
    const double predicted = static_cast<double>(cm.predicted(c));
    const double fn = support - tp, fp = predicted - tp;
    const double tn = total - tp - fn - fp;
    ClassScores s;
    s.support = cm.support(c);
    s.accuracy = safe_div(tp + tn, total);
    s.precision = safe_div(tp, predicted);
    s.recall = safe_div(tp, support);
    s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
    s.jaccard = tp + fp + fn > 0.0 ? tp / (tp + fp + fn) : 1.0;  // absent in both: perfect match
    s.undefined = support == 0.0 || predicted == 0.0;
    r.per_class.push_back(s);
  }
  for (const auto& s : r.per_class) {
    r.macro.accuracy += s.accuracy / static_cast<double>(C);
    r.macro.precision += s.precision / static_cast<double>(C);
    r.macro.recall += s.recall / static_cast<double>(C);
    r.macro.f1 += s.f1 / static_cast<double>(C);
    r.macro.jaccard += s.jaccard / static_cast<double>(C);
    r.macro.support += s.support;
    r.macro.undefined = r.macro.undefined || s.undefined;
  }
  const double acc = safe_div(static_cast<double>(cm.trace()), total);
  r.micro.accuracy = r.micro.precision = r.micro.recall = r.micro.f1 = acc;
  r.micro.jaccard = 0.0;
  r.micro.support = cm.total();
  return r;
}

ClassificationReport classification_report(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                           std::size_t classes) {
  return classification_report(confusion(pred, gt, classes));
}

std::uint64_t ClassHistogram::total() const {
  std::uint64_t t = 0;
  for (auto v : counts) t += v;
  return t;
}

std::vector<double> ClassHistogram::class_fractions() const {
  std::vector<double> f(classes, 0.0);
  for (std::size_t v = 0; v < bins; ++v)
    for (std::size_t c = 0; c < classes; ++c) f[c] += static_cast<double>(at(v, c));
  const double t = static_cast<double>(total());
  for (auto& x : f) x = safe_div(x, t);
  return f;
}

std::vector<double> ClassHistogram::normalized() const {
  const double t = static_cast<double>(total());
  std::vector<double> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = safe_div(static_cast<double>(counts[i]), t);
  return out;
}

ClassHistogram class_histograms(std::span<const std::uint16_t> gray, std::span<const std::uint8_t> gt,
                                std::size_t bins, std::size_t classes) {
  if (gray.size() != gt.size()) throw MetricError("class_histograms: data and labels differ in size");
  ClassHistogram h;
  h.bins = bins;
  h.classes = classes;
  h.counts.assign(bins * classes, 0);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    if (gray[i] >= bins) throw MetricError("class_histograms: gray value beyond bin range");
    if (gt[i] >= classes) throw MetricError("class_histograms: label outside {0..C-1}");
    ++h.counts[gray[i] * classes + gt[i]];
  }
  return h;
}

BaselineResult baseline_zerooc(std::span<const double> class_fractions) {
  if (class_fractions.empty()) throw MetricError("baseline_zerooc: empty class fractions");
  const auto majority = static_cast<std::size_t>(
      std::max_element(class_fractions.begin(), class_fractions.end()) - class_fractions.begin());
  BaselineResult r;
  r.per_class.assign(class_fractions.size(), 0.0);
  r.per_class[majority] = class_fractions[majority];
  r.mean = class_fractions[majority] / static_cast<double>(class_fractions.size());
  return r;
}

BaselineResult baseline_bin_zerooc(const ClassHistogram& hist) {
  const std::size_t C = hist.classes;
  if (C == 0 || hist.bins == 0) throw MetricError("baseline_bin_zerooc: empty histogram");
  ConfusionMatrix cm;
  cm.classes = C;
  cm.counts.assign(C * C, 0);
  for (std::size_t v = 0; v < hist.bins; ++v) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (hist.at(v, c) > hist.at(v, best)) best = c;
    for (std::size_t c = 0; c < C; ++c) cm.counts[c * C + best] += hist.at(v, c);
  }
  BaselineResult r;
  for (std::size_t c = 0; c < C; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(cm.predicted(c)) - tp;
    const double fn = static_cast<double>(cm.support(c)) - tp;
    r.per_class.push_back(tp + fp + fn > 0.0 ? tp / (tp + fp + fn) : 1.0);
  }
  for (double j : r.per_class) r.mean += j / static_cast<double>(C);
  return r;
}

std::vector<std::uint8_t> error_volume(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  check_pair(pred, gt, 1);
  std::vector<std::uint8_t> err(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) err[i] = pred[i] != gt[i];
  return err;
}

template double jacc2_loss(const OneHotBatch&, ProbBatch<float>, bool);
template double jacc2_loss(const OneHotBatch&, ProbBatch<double>, bool);
template std::vector<float> jacc2_grad(const OneHotBatch&, ProbBatch<float>, bool);
template std::vector<double> jacc2_grad(const OneHotBatch&, ProbBatch<double>, bool);
template void Jacc2Accumulator::add(const OneHotBatch&, ProbBatch<float>);
template void Jacc2Accumulator::add(const OneHotBatch&, ProbBatch<double>);

}  // namespace modunet
