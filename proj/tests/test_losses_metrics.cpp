#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "modunet/grad_check.hpp"
#include "modunet/metrics.hpp"
#include "modunet/rng.hpp"
#include "test_util.hpp"

using namespace modunet;
using testutil::random_tensor;

namespace {

// Softmax of random logits: valid probability rows.
std::vector<double> random_rows(std::size_t n, std::size_t c, Rng& rng, double spread = 2.0) {
  std::vector<double> p(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < c; ++k) z += p[i * c + k] = std::exp(spread * rng.normal());
    for (std::size_t k = 0; k < c; ++k) p[i * c + k] /= z;
  }
  return p;
}

OneHotBatch random_labels(std::size_t n, std::size_t c, Rng& rng) {
  OneHotBatch y;
  y.classes = c;
  for (std::size_t i = 0; i < n; ++i) y.labels.push_back(static_cast<std::uint8_t>(rng.uniform_int(c)));
  return y;
}

// Jacc2 written out term by term from the definition.
double oracle_jacc2(const OneHotBatch& y, const std::vector<double>& p) {
  const std::size_t C = y.classes;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double sq = 0;
    for (std::size_t c = 0; c < C; ++c) sq += p[i * C + c] * p[i * C + c];
    const double star = p[i * C + y.labels[i]];
    num += star;
    den += 1.0 + sq - star;
  }
  return 1.0 - num / den;
}

struct Tally {
  double tp = 0, fp = 0, fn = 0, tn = 0;
};

Tally tally(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, std::uint8_t c) {
  Tally t;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred[i] == c, g = gt[i] == c;
    t.tp += p && g;
    t.fp += p && !g;
    t.fn += !p && g;
    t.tn += !p && !g;
  }
  return t;
}

}  // namespace

TEST_SUITE("losses_metrics") {

TEST_CASE("Jacc2 hand values") {
  OneHotBatch y{{0}, 2};
  std::vector<double> half{0.5, 0.5};
  CHECK(jacc2_loss(y, ProbBatch<double>{half, 2}) == 0.5);

  Rng rng(1);
  auto y3 = random_labels(17, 3, rng);
  std::vector<double> uniform(17 * 3, 1.0 / 3.0);
  CHECK(jacc2_loss(y3, ProbBatch<double>{uniform, 3}) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  std::vector<double> exact(17 * 3, 0.0);
  for (std::size_t i = 0; i < 17; ++i) exact[i * 3 + y3.labels[i]] = 1.0;
  CHECK(jacc2_loss(y3, ProbBatch<double>{exact, 3}) == 0.0);
}

TEST_CASE("Jacc2 properties on random batches") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 2 + rng.uniform_int(5), N = 1 + rng.uniform_int(40);
    const auto y = random_labels(N, C, rng);
    const auto p = random_rows(N, C, rng, 0.5 + 3.0 * rng.uniform());
    const double j = jacc2_loss(y, ProbBatch<double>{p, C});
    REQUIRE(j >= 0.0);
    REQUIRE(j <= 1.0);
    REQUIRE(j == doctest::Approx(oracle_jacc2(y, p)).epsilon(1e-12));
  }
}

TEST_CASE("Jacc2 gradient matches finite differences") {
  Rng rng(3);
  for (std::size_t C : {2u, 3u, 5u}) {
    const std::size_t N = 9;
    const auto y = random_labels(N, C, rng);
    const auto rows = random_rows(N, C, rng);
    Tensor<double> p({N, C}, rows);
    GradCheckTarget t;
    t.tensors["p"] = &p;
    // validation off: perturbed rows no longer sum to one
    t.objective = [&] { return jacc2_loss(y, ProbBatch<double>{p.data(), C}, false); };
    t.analytic = [&] {
      return std::map<std::string, Tensor<double>>{
          {"p", Tensor<double>({N, C}, jacc2_grad(y, ProbBatch<double>{p.data(), C}, false))}};
    };
    GradCheckOptions opt;
    opt.step = 1e-6;
    const auto rep = grad_check(t, 1e-6, opt);
    CHECK_MESSAGE(rep.passed(), "C=", C, " worst ", rep.worst());
  }
}

TEST_CASE("Jacc2 input validation and accumulator") {
  OneHotBatch y{{0, 1}, 2};
  std::vector<double> bad{0.7, 0.7, 0.5, 0.5};
  CHECK_THROWS_AS(jacc2_loss(y, ProbBatch<double>{bad, 2}), MetricError);
  OneHotBatch out_of_range{{0, 2}, 2};
  std::vector<double> ok{0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(jacc2_loss(out_of_range, ProbBatch<double>{ok, 2}), MetricError);
  std::vector<double> short_rows{0.5, 0.5};
  CHECK_THROWS_AS(jacc2_loss(y, ProbBatch<double>{short_rows, 2}), MetricError);
  CHECK_THROWS_AS(OneHotBatch::from_rows(std::vector<double>{1, 1}, 2), MetricError);
  CHECK(OneHotBatch::from_rows(std::vector<double>{0, 1, 1, 0}, 2).labels == std::vector<std::uint8_t>{1, 0});

  // accumulating two halves equals the loss of the whole batch
  Rng rng(4);
  const auto yy = random_labels(20, 3, rng);
  const auto p = random_rows(20, 3, rng);
  Jacc2Accumulator acc;
  OneHotBatch a{{yy.labels.begin(), yy.labels.begin() + 8}, 3}, b{{yy.labels.begin() + 8, yy.labels.end()}, 3};
  acc.add(a, ProbBatch<double>{std::span<const double>(p).subspan(0, 24), 3});
  acc.add(b, ProbBatch<double>{std::span<const double>(p).subspan(24), 3});
  CHECK(acc.value() == doctest::Approx(jacc2_loss(yy, ProbBatch<double>{p, 3})).epsilon(1e-12));
}

TEST_CASE("Jaccard index") {
  std::vector<std::uint8_t> a{0, 1, 1, 1, 0}, b{0, 0, 1, 1, 1}, none(5, 0);
  CHECK(jaccard_index(a, a) == 1.0);
  CHECK(jaccard_index(a, b) == 0.5);
  CHECK(jaccard_index(std::vector<std::uint8_t>{1, 0}, std::vector<std::uint8_t>{0, 1}) == 0.0);
  CHECK(jaccard_index(none, none) == 1.0);
  CHECK_THROWS_AS(jaccard_index(a, std::vector<std::uint8_t>{1}), MetricError);
}

TEST_CASE("classwise Jaccard against exhaustive set counts") {
  std::vector<std::uint8_t> gt{0, 1, 1, 0}, pr{0, 1, 0, 0};
  auto cj = classwise_jaccard(pr, gt, 2);
  CHECK(cj.per_class[0] == doctest::Approx(2.0 / 3.0));
  CHECK(cj.per_class[1] == 0.5);
  CHECK(cj.mean == doctest::Approx((2.0 / 3.0 + 0.5) / 2));
  CHECK(classwise_jaccard(gt, gt, 2).mean == 1.0);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> g(30), p(30);
    for (std::size_t i = 0; i < 30; ++i) {
      g[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
      p[i] = rng.uniform() < 0.6 ? g[i] : static_cast<std::uint8_t>(rng.uniform_int(3));
    }
    const auto r = classwise_jaccard(p, g, 3);
    for (std::uint8_t c = 0; c < 3; ++c) {
      std::set<std::size_t> A, B, U, I;
      for (std::size_t i = 0; i < 30; ++i) {
        if (p[i] == c) A.insert(i);
        if (g[i] == c) B.insert(i);
      }
      for (auto i : A) (B.count(i) ? I : U).insert(i);
      for (auto i : B) U.insert(i);
      const double expect = U.empty() ? 1.0 : static_cast<double>(I.size()) / static_cast<double>(U.size());
      REQUIRE(r.per_class[c] == doctest::Approx(expect));
    }
  }
  CHECK_THROWS_AS(classwise_jaccard(std::vector<std::uint8_t>{3}, std::vector<std::uint8_t>{0}, 3), MetricError);
}

TEST_CASE("confusion matrix and normalizations") {
  std::vector<std::uint8_t> gt{0, 0, 1, 2}, pr{0, 1, 1, 2};
  const auto cm = confusion(pr, gt, 3);
  CHECK(cm.counts == std::vector<std::uint64_t>{1, 1, 0, 0, 1, 0, 0, 0, 1});
  CHECK(normalize_confusion(cm, ConfusionNorm::ByRow) == std::vector<double>{50, 50, 0, 0, 100, 0, 0, 0, 100});
  const auto col = normalize_confusion(cm, ConfusionNorm::ByColumn);
  CHECK(col == std::vector<double>{100, 50, 0, 0, 50, 0, 0, 0, 100});
  const auto glob = normalize_confusion(cm, ConfusionNorm::Global);
  double sum = 0;
  for (double v : glob) sum += v;
  CHECK(sum == doctest::Approx(100.0).epsilon(1e-11));

  const auto perfect = confusion(gt, gt, 3);
  for (std::size_t c = 0; c < 3; ++c) CHECK(perfect.at(c, c) == perfect.support(c));
  const auto row = normalize_confusion(confusion(gt, gt, 4), ConfusionNorm::ByRow);
  CHECK(row[0] == 100.0);
  CHECK(row[15] == 0.0);  // class 3 is absent: zero row, no NaN
}

TEST_CASE("classification report against an independent tally") {
  Rng rng(6);
  std::vector<std::uint8_t> g(200), p(200);
  for (std::size_t i = 0; i < 200; ++i) {
    g[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
    p[i] = rng.uniform() < 0.7 ? g[i] : static_cast<std::uint8_t>(rng.uniform_int(3));
  }
  const auto rep = classification_report(p, g, 3);
  double f1_sum = 0, trace = 0;
  for (std::uint8_t c = 0; c < 3; ++c) {
    const auto t = tally(p, g, c);
    const double prec = t.tp / (t.tp + t.fp), rec = t.tp / (t.tp + t.fn);
    const auto& s = rep.per_class[c];
    CHECK(s.accuracy == doctest::Approx((t.tp + t.tn) / 200.0));
    CHECK(s.precision == doctest::Approx(prec));
    CHECK(s.recall == doctest::Approx(rec));
    CHECK(s.f1 == doctest::Approx(2 * prec * rec / (prec + rec)));
    CHECK(s.jaccard == doctest::Approx(t.tp / (t.tp + t.fp + t.fn)));
    CHECK(s.support == static_cast<std::uint64_t>(t.tp + t.fn));
    f1_sum += s.f1;
    trace += t.tp;
  }
  CHECK(rep.macro.f1 == doctest::Approx(f1_sum / 3));
  CHECK(rep.micro.accuracy == doctest::Approx(trace / 200));
  CHECK(rep.micro.precision == doctest::Approx(trace / 200));
  CHECK(rep.micro.recall == doctest::Approx(trace / 200));
  CHECK(rep.micro.f1 == doctest::Approx(trace / 200));

  const auto perfect = classification_report(g, g, 3);
  for (const auto& s : perfect.per_class) {
    CHECK(s.accuracy == 1.0);
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
    CHECK(s.jaccard == 1.0);
  }
  // a class absent from both volumes is flagged and does not produce NaN
  const auto absent = classification_report(g, g, 4);
  CHECK(absent.per_class[3].undefined);
  CHECK(absent.per_class[3].precision == 0.0);
  CHECK_FALSE(std::isnan(absent.macro.f1));
}

TEST_CASE("histograms") {
  std::vector<std::uint16_t> gray{0, 0, 1, 1, 1, 3};
  std::vector<std::uint8_t> gt{0, 1, 1, 1, 0, 1};
  const auto h = class_histograms(gray, gt, 4, 2);
  CHECK(h.at(0, 0) == 1);
  CHECK(h.at(0, 1) == 1);
  CHECK(h.at(1, 1) == 2);
  CHECK(h.at(1, 0) == 1);
  CHECK(h.at(3, 1) == 1);
  CHECK(h.at(2, 0) + h.at(2, 1) == 0);
  CHECK(h.total() == 6);
  double s = 0;
  for (double v : h.normalized()) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(h.class_fractions()[1] == doctest::Approx(4.0 / 6.0));

  std::vector<std::uint8_t> one(6, 1);
  const auto single = class_histograms(gray, one, 4, 3);
  for (std::size_t v = 0; v < 4; ++v) CHECK(single.at(v, 0) + single.at(v, 2) == 0);
  CHECK_THROWS_AS(class_histograms(std::vector<std::uint16_t>{4}, std::vector<std::uint8_t>{0}, 4, 2), MetricError);
}

TEST_CASE("ZeroOC baseline") {
  const auto r = baseline_zerooc(std::vector<double>{0.810, 0.185, 0.005});
  CHECK(r.per_class == std::vector<double>{0.810, 0.0, 0.0});
  CHECK(r.mean * 100 == doctest::Approx(27.0).epsilon(1e-12));
  CHECK(baseline_zerooc(std::vector<double>{1.0}).mean == 1.0);
  const auto tie = baseline_zerooc(std::vector<double>{0.5, 0.5});
  CHECK(tie.per_class == std::vector<double>{0.5, 0.0});
  CHECK(tie.mean == 0.25);
  CHECK_THROWS_AS(baseline_zerooc(std::vector<double>{}), MetricError);
}

TEST_CASE("Bin-ZeroOC baseline") {
  ClassHistogram h;
  h.bins = 2;
  h.classes = 2;
  h.counts = {8, 2, 1, 9};
  // gray 0 -> class 0, gray 1 -> class 1; J = TP / (TP + FP + FN)
  const auto r = baseline_bin_zerooc(h);
  CHECK(r.per_class[0] == doctest::Approx(8.0 / 11.0));
  CHECK(r.per_class[1] == doctest::Approx(9.0 / 12.0));

  // equal to the Jaccard of actually classifying every voxel by its gray value
  Rng rng(7);
  std::vector<std::uint16_t> gray(500);
  std::vector<std::uint8_t> gt(500);
  for (std::size_t i = 0; i < 500; ++i) {
    gt[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
    gray[i] = static_cast<std::uint16_t>(std::min<long>(15, std::max<long>(0, std::lround(4 * gt[i] + 2 * rng.normal()))));
  }
  const auto hist = class_histograms(gray, gt, 16, 3);
  std::vector<std::uint8_t> assign(16, 0);
  for (std::size_t v = 0; v < 16; ++v)
    for (std::uint8_t c = 1; c < 3; ++c)
      if (hist.at(v, c) > hist.at(v, assign[v])) assign[v] = c;
  std::vector<std::uint8_t> pred(500);
  for (std::size_t i = 0; i < 500; ++i) pred[i] = assign[gray[i]];
  const auto direct = classwise_jaccard(pred, gt, 3);
  const auto b = baseline_bin_zerooc(hist);
  for (std::size_t c = 0; c < 3; ++c) CHECK(b.per_class[c] == doctest::Approx(direct.per_class[c]));

  ClassHistogram disjoint;
  disjoint.bins = 6;
  disjoint.classes = 3;
  disjoint.counts = {5, 0, 0, 3, 0, 0, 0, 4, 0, 0, 7, 0, 0, 0, 1, 0, 0, 9};
  CHECK(baseline_bin_zerooc(disjoint).mean == 1.0);
}

TEST_CASE("error volume") {
  std::vector<std::uint8_t> gt{0, 1, 2, 2}, pr{0, 1, 2, 2};
  CHECK(error_volume(pr, gt) == std::vector<std::uint8_t>{0, 0, 0, 0});
  pr[2] = 0;
  CHECK(error_volume(pr, gt) == std::vector<std::uint8_t>{0, 0, 1, 0});
  const auto cm = confusion(pr, gt, 3);
  const auto e = error_volume(pr, gt);
  CHECK(static_cast<std::uint64_t>(std::count(e.begin(), e.end(), 1)) == cm.total() - cm.trace());
  CHECK_THROWS_AS(error_volume(pr, std::vector<std::uint8_t>{0}), MetricError);
}

}  // TEST_SUITE
