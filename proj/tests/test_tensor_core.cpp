#include <cmath>
#include <numeric>

#include "doctest.h"
#include "modunet/grad_check.hpp"
#include "modunet/kernels.hpp"
#include "modunet/keyvalue.hpp"
#include "modunet/ops.hpp"
#include "modunet/rng.hpp"
#include "test_util.hpp"

using namespace modunet;
using testutil::random_tensor;

namespace {

// Naive 2D Same/Valid convolution, written from the definition.
Tensor<double> oracle_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t s,
                             bool same) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t k = w.dim(0), Co = w.dim(3);
  std::size_t Ho, Wo;
  long long ph = 0, pw = 0;
  if (same) {
    Ho = (H + s - 1) / s;
    Wo = (W + s - 1) / s;
    const long long th = std::max<long long>((Ho - 1) * s + k - H, 0), tw = std::max<long long>((Wo - 1) * s + k - W, 0);
    ph = th / 2;
    pw = tw / 2;
  } else {
    Ho = (H - k) / s + 1;
    Wo = (W - k) / s + 1;
  }
  Tensor<double> y({B, Ho, Wo, Co});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j)
        for (std::size_t o = 0; o < Co; ++o) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t di = 0; di < k; ++di)
            for (std::size_t dj = 0; dj < k; ++dj) {
              const long long yi = static_cast<long long>(i * s + di) - ph, xj = static_cast<long long>(j * s + dj) - pw;
              if (yi < 0 || xj < 0 || yi >= static_cast<long long>(H) || xj >= static_cast<long long>(W)) continue;
              for (std::size_t c = 0; c < Ci; ++c)
                acc += x[((n * H + yi) * W + xj) * Ci + c] * w[((di * k + dj) * Ci + c) * Co + o];
            }
          y[((n * Ho + i) * Wo + j) * Co + o] = acc;
        }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// sum(f(x) * probe), a scalar whose gradient is the backward of `probe`.
double probe_dot(const Tensor<double>& y, const Tensor<double>& probe) { return dot(y, probe); }

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("tensor shape contract") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.channels() == 4);
  CHECK_THROWS_AS(Tensor<double>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
  CHECK(t.reshaped({6, 4}).shape() == Shape{6, 4});
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  const Grid g = grid_of({2, 8, 6, 3});
  CHECK(g.depth == 1);
  CHECK(g.height == 8);
  CHECK(g.spatial_rank == 2);
  CHECK(grid_of({1, 4, 5, 6, 2}).depth == 4);
}

TEST_CASE("rng streams are reproducible and independent") {
  Rng a(42), b(42), c(42, 1);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u32();
    CHECK(x == b.next_u32());
    differs = differs || x != c.next_u32();
  }
  CHECK(differs);
  Rng d(7);
  Rng copy = d;
  CHECK(d.uniform() == copy.uniform());
  // uniform_int is unbiased enough for a chi-square sanity check
  Rng r(3);
  std::vector<int> hist(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++hist[r.uniform_int(6)];
  double chi = 0;
  for (int h : hist) chi += (h - n / 6.0) * (h - n / 6.0) / (n / 6.0);
  CHECK(chi < 20.5);  // p = 0.001 at 5 dof
  double m = 0, v = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    m += z;
    v += z * z;
  }
  CHECK(std::abs(m / n) < 0.02);
  CHECK(std::abs(v / n - 1.0) < 0.03);
}

TEST_CASE("conv: identity and zero kernels") {
  Rng rng(1);
  auto x = random_tensor({2, 5, 4, 3}, rng);
  Tensor<double> w({1, 1, 3, 3});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  CHECK(max_abs_diff(conv(x, w, Tensor<double>{}), x) == 0.0);

  Tensor<double> zero({3, 3, 3, 2});
  Tensor<double> bias({2}, std::vector<double>{0.25, -1.5});
  auto y = conv(x, zero, bias);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == bias[i % 2]);
}

TEST_CASE("conv matches the naive oracle") {
  Rng rng(2);
  SUBCASE("5x5x1 input, 3x3 kernel, Same") {
    auto x = random_tensor({1, 5, 5, 1}, rng);
    auto w = random_tensor({3, 3, 1, 1}, rng);
    auto b = random_tensor({1}, rng);
    CHECK(max_abs_diff(conv(x, w, b), oracle_conv2d(x, w, b, 1, true)) < 1e-12);
  }
  SUBCASE("multi-channel, stride 2, odd extents") {
    auto x = random_tensor({2, 7, 6, 3}, rng);
    auto w = random_tensor({3, 3, 3, 4}, rng);
    auto b = random_tensor({4}, rng);
    const auto y = conv(x, w, b, {2});
    CHECK(y.shape() == Shape{2, 4, 3, 4});
    CHECK(max_abs_diff(y, oracle_conv2d(x, w, b, 2, true)) < 1e-12);
  }
  SUBCASE("Valid padding") {
    auto x = random_tensor({1, 6, 6, 2}, rng);
    auto w = random_tensor({3, 3, 2, 2}, rng);
    CHECK(max_abs_diff(conv(x, w, Tensor<double>{}, {1}, Padding::Valid),
                       oracle_conv2d(x, w, Tensor<double>{}, 1, false)) < 1e-12);
  }
}

TEST_CASE("conv errors") {
  Tensor<double> x({1, 4, 4, 2});
  CHECK_THROWS_AS(conv(x, Tensor<double>({3, 3, 3, 1}), Tensor<double>{}), ShapeError);
  CHECK_THROWS_AS(conv(x, Tensor<double>({3, 3, 2, 1}), Tensor<double>{}, {0}), std::invalid_argument);
  CHECK_THROWS_AS(conv(x, Tensor<double>({5, 5, 2, 1}), Tensor<double>{}, {1}, Padding::Valid), ShapeError);
}

TEST_CASE("reference and parallel kernels agree") {
  Rng rng(3);
  for (int three_d = 0; three_d < 2; ++three_d) {
    CAPTURE(three_d);
    const Shape xs = three_d ? Shape{2, 5, 6, 7, 3} : Shape{3, 9, 8, 3};
    const Shape ws = three_d ? Shape{3, 3, 3, 3, 4} : Shape{3, 3, 3, 4};
    auto x = random_tensor(xs, rng);
    auto w = random_tensor(ws, rng);
    for (std::size_t s : {1u, 2u}) {
      const auto geo = conv_geometry(x.shape(), w.shape(), {s}, Padding::Same);
      std::vector<double> y_ref(geo.output_size()), y_par(geo.output_size());
      kernels::reference::conv_forward<double>(geo, x.data(), w.data(), {}, y_ref);
      kernels::parallel::conv_forward<double>(geo, x.data(), w.data(), {}, y_par);
      for (std::size_t i = 0; i < y_ref.size(); ++i) REQUIRE(std::abs(y_ref[i] - y_par[i]) < 1e-12);

      std::vector<double> g(geo.output_size());
      for (auto& v : g) v = rng.uniform() - 0.5;
      std::vector<double> dx_ref(x.size()), dx_par(x.size()), dw_ref(w.size()), dw_par(w.size()), db_ref(4), db_par(4);
      kernels::reference::conv_backward_input<double>(geo, g, w.data(), dx_ref);
      kernels::parallel::conv_backward_input<double>(geo, g, w.data(), dx_par);
      kernels::reference::conv_backward_weights<double>(geo, x.data(), g, dw_ref, db_ref);
      kernels::parallel::conv_backward_weights<double>(geo, x.data(), g, dw_par, db_par);
      for (std::size_t i = 0; i < dx_ref.size(); ++i) REQUIRE(std::abs(dx_ref[i] - dx_par[i]) < 1e-12);
      for (std::size_t i = 0; i < dw_ref.size(); ++i) REQUIRE(std::abs(dw_ref[i] - dw_par[i]) < 1e-11);
      for (std::size_t i = 0; i < 4; ++i) REQUIRE(std::abs(db_ref[i] - db_par[i]) < 1e-11);
    }
  }
}

TEST_CASE("conv backward: zero cotangent, identity kernel, finite differences") {
  Rng rng(4);
  auto x = random_tensor({2, 5, 5, 2}, rng);
  auto w = random_tensor({3, 3, 2, 3}, rng);
  auto b = random_tensor({3}, rng);
  const auto y = conv(x, w, b);
  auto g0 = conv_backward(x, w, Tensor<double>(y.shape()));
  for (double v : g0.input_grad.data()) CHECK(v == 0.0);
  for (double v : g0.param_grads["weights"].data()) CHECK(v == 0.0);

  Tensor<double> id({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  auto dy = random_tensor({2, 5, 5, 2}, rng);
  CHECK(max_abs_diff(conv_backward(x, id, dy).input_grad, dy) == 0.0);

  for (std::size_t s : {1u, 2u}) {
    CAPTURE(s);
    const auto probe = random_tensor(conv(x, w, b, {s}).shape(), rng);
    GradCheckTarget t;
    t.tensors = {{"x", &x}, {"weights", &w}, {"bias", &b}};
    t.objective = [&] { return probe_dot(conv(x, w, b, {s}), probe); };
    t.analytic = [&] {
      auto g = conv_backward(x, w, probe, {s});
      return std::map<std::string, Tensor<double>>{
          {"x", g.input_grad}, {"weights", g.param_grads["weights"]}, {"bias", g.param_grads["bias"]}};
    };
    const auto rep = grad_check(t, 1e-5);
    CHECK_MESSAGE(rep.passed(), "worst ", rep.worst());
  }
}

TEST_CASE("3D conv gradients") {
  Rng rng(5);
  auto x = random_tensor({1, 4, 4, 4, 2}, rng);
  auto w = random_tensor({3, 3, 3, 2, 2}, rng);
  auto b = random_tensor({2}, rng);
  const auto probe = random_tensor(conv(x, w, b, {2}).shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}, {"weights", &w}, {"bias", &b}};
  t.objective = [&] { return dot(conv(x, w, b, {2}), probe); };
  t.analytic = [&] {
    auto g = conv_backward(x, w, probe, {2});
    return std::map<std::string, Tensor<double>>{
        {"x", g.input_grad}, {"weights", g.param_grads["weights"]}, {"bias", g.param_grads["bias"]}};
  };
  CHECK(grad_check(t, 1e-5).passed());
}

TEST_CASE("depthwise and separable convolution") {
  Rng rng(6);
  auto x = random_tensor({2, 6, 5, 3}, rng);
  SeparableWeights<double> sw{random_tensor({3, 3, 3, 1}, rng), random_tensor({1, 1, 3, 4}, rng)};
  auto b = random_tensor({4}, rng);

  // separable == depthwise followed by a 1x1 conv; depthwise == conv with a block-diagonal kernel
  Tensor<double> dense({3, 3, 3, 3});
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t c = 0; c < 3; ++c) dense[(t * 3 + c) * 3 + c] = sw.depthwise[t * 3 + c];
  CHECK(max_abs_diff(depthwise_conv(x, sw.depthwise), conv(x, dense, Tensor<double>{})) < 1e-12);
  CHECK(max_abs_diff(separable_conv(x, sw, b), conv(conv(x, dense, Tensor<double>{}), sw.pointwise, b)) < 1e-12);

  const auto probe = random_tensor(separable_conv(x, sw, b).shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}, {"depthwise", &sw.depthwise}, {"pointwise", &sw.pointwise}, {"bias", &b}};
  t.objective = [&] { return dot(separable_conv(x, sw, b), probe); };
  t.analytic = [&] {
    auto g = separable_conv_backward(x, sw, probe);
    g.param_grads["x"] = g.input_grad;
    return g.param_grads;
  };
  CHECK(grad_check(t, 1e-5).passed());
}

TEST_CASE("transposed conv: shape, bias, adjoint identity, gradients") {
  Rng rng(7);
  auto x = random_tensor({1, 4, 4, 3}, rng);
  auto w = random_tensor({3, 3, 2, 3}, rng);  // (k, k, out, in)
  auto b = random_tensor({2}, rng);
  CHECK(transposed_conv(x, w, b, {2}).shape() == Shape{1, 8, 8, 2});

  auto yz = transposed_conv(Tensor<double>({1, 4, 4, 3}), w, b, {2});
  for (std::size_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == b[i % 2]);

  // <conv(u), v> == <u, conv^T(v)> with the same weight tensor
  auto u = random_tensor({1, 8, 8, 2}, rng);
  const double lhs = dot(conv(u, w, Tensor<double>{}, {2}), x);
  const double rhs = dot(u, transposed_conv(x, w, Tensor<double>{}, {2}));
  CHECK(std::abs(lhs - rhs) < 1e-12 * std::max(1.0, std::abs(lhs)));

  auto x3 = random_tensor({1, 2, 3, 2, 2}, rng);
  auto w3 = random_tensor({3, 3, 3, 2, 2}, rng);
  auto u3 = random_tensor({1, 4, 6, 4, 2}, rng);
  const double l3 = dot(conv(u3, w3, Tensor<double>{}, {2}), x3), r3 = dot(u3, transposed_conv(x3, w3, Tensor<double>{}, {2}));
  CHECK(std::abs(l3 - r3) < 1e-12 * std::max(1.0, std::abs(l3)));

  const auto probe = random_tensor({1, 8, 8, 2}, rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}, {"weights", &w}, {"bias", &b}};
  t.objective = [&] { return dot(transposed_conv(x, w, b, {2}), probe); };
  t.analytic = [&] {
    auto g = transposed_conv_backward(x, w, probe, {2});
    g.param_grads["x"] = g.input_grad;
    return g.param_grads;
  };
  CHECK(grad_check(t, 1e-5).passed());
  CHECK_THROWS_AS(transposed_conv(x, Tensor<double>({3, 3, 2, 4}), b, {2}), ShapeError);
}

TEST_CASE("batch norm") {
  Rng rng(8);
  Tensor<double> gamma({3}, 1.0), beta({3}, 0.0), rm({3}, 0.0), rv({3}, 1.0);

  Tensor<double> c({2, 3, 3, 3}, 4.2);
  auto zc = batch_norm(c, gamma, beta, rm, rv, 0.5, LayerMode::Train);
  for (double v : zc.data()) CHECK(std::abs(v) < 1e-9);
  CHECK(rm[0] == doctest::Approx(2.1));  // 0.5 * 0 + 0.5 * 4.2
  CHECK(rv[0] == doctest::Approx(0.5));  // batch variance 0

  auto x = random_tensor({3, 4, 4, 3}, rng, 2.0, 1.0);
  Tensor<double> rm2({3}, 0.0), rv2({3}, 1.0);
  auto y = batch_norm(x, gamma, beta, rm2, rv2, 0.5, LayerMode::Train);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0, v = 0;
    const std::size_t n = y.size() / 3;
    for (std::size_t i = ch; i < y.size(); i += 3) m += y[i];
    m /= n;
    for (std::size_t i = ch; i < y.size(); i += 3) v += (y[i] - m) * (y[i] - m);
    v /= n;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);  // epsilon = 1e-5 shrinks the unit variance slightly
  }

  const auto rm_before = rm2.storage(), rv_before = rv2.storage();
  batch_norm(x, gamma, beta, rm2, rv2, 0.5, LayerMode::Infer);
  CHECK(rm2.storage() == rm_before);
  CHECK(rv2.storage() == rv_before);

  auto g = random_tensor({3}, rng, 1.0, 1.0), bt = random_tensor({3}, rng);
  const auto probe = random_tensor(x.shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}, {"gamma", &g}, {"beta", &bt}};
  t.objective = [&] { return dot(batch_norm_train<double>(x, g, bt, nullptr, nullptr), probe); };
  t.analytic = [&] {
    NormCache<double> cache;
    batch_norm_train(x, g, bt, &cache, nullptr);
    auto r = batch_norm_backward(probe, g, cache);
    r.param_grads["x"] = r.input_grad;
    return r.param_grads;
  };
  const auto rep = grad_check(t, 1e-4);
  CHECK_MESSAGE(rep.passed(), "worst ", rep.worst());
}

TEST_CASE("layer norm") {
  Rng rng(9);
  Tensor<double> gamma({2}, 1.0), beta({2}, 0.0);
  auto zc = layer_norm(Tensor<double>({2, 3, 3, 2}, -1.0), gamma, beta);
  for (double v : zc.data()) CHECK(v == 0.0);

  auto x = random_tensor({2, 4, 3, 2}, rng, 3.0, -1.0);
  auto y = layer_norm(x, gamma, beta);
  const std::size_t per = y.size() / 2;
  for (std::size_t n = 0; n < 2; ++n) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < per; ++i) m += y[n * per + i];
    m /= per;
    for (std::size_t i = 0; i < per; ++i) v += (y[n * per + i] - m) * (y[n * per + i] - m);
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v / per - 1.0) < 1e-4);
  }

  auto g = random_tensor({2}, rng, 1.0, 1.0), bt = random_tensor({2}, rng);
  const auto probe = random_tensor(x.shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}, {"gamma", &g}, {"beta", &bt}};
  t.objective = [&] { return dot(layer_norm(x, g, bt), probe); };
  t.analytic = [&] {
    NormCache<double> cache;
    layer_norm(x, g, bt, &cache);
    auto r = layer_norm_backward(probe, g, cache);
    r.param_grads["x"] = r.input_grad;
    return r.param_grads;
  };
  CHECK(grad_check(t, 1e-4).passed());
}

TEST_CASE("relu and softmax") {
  Tensor<double> x({1, 1, 1, 2}, std::vector<double>{-1.0, 2.0});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);

  auto s = softmax_channels(Tensor<double>({1, 1, 1, 3}, 5.0));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto big = softmax_channels(Tensor<double>({1, 1, 1, 2}, std::vector<double>{1000.0, 0.0}));
  CHECK(std::isfinite(big[1]));
  CHECK(big[0] == doctest::Approx(1.0));

  Rng rng(10);
  auto z = random_tensor({2, 3, 3, 4}, rng, 4.0);
  const auto probe = random_tensor(z.shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &z}};
  t.objective = [&] { return dot(softmax_channels(z), probe); };
  t.analytic = [&] { return std::map<std::string, Tensor<double>>{{"x", softmax_backward(softmax_channels(z), probe)}}; };
  CHECK(grad_check(t, 1e-5).passed());

  // relu away from the kink
  auto a = random_tensor({1, 4, 4, 2}, rng, 2.0);
  for (auto& v : a.storage())
    if (std::abs(v) < 0.05) v = 0.3;
  const auto probe_r = random_tensor(a.shape(), rng);
  GradCheckTarget tr;
  tr.tensors = {{"x", &a}};
  tr.objective = [&] { return dot(relu(a), probe_r); };
  tr.analytic = [&] { return std::map<std::string, Tensor<double>>{{"x", relu_backward(a, probe_r)}}; };
  CHECK(grad_check(tr, 1e-6).passed());
}

TEST_CASE("dropout") {
  Rng rng(11);
  auto x = random_tensor({1, 4, 4, 2}, rng);
  CHECK(dropout(x, 0.0, LayerMode::Train, rng).storage() == x.storage());
  CHECK(dropout(x, 0.1, LayerMode::Infer, rng).storage() == x.storage());
  CHECK_THROWS(dropout(x, 1.0, LayerMode::Train, rng));

  Tensor<double> ones({1, 1000, 1000, 1}, 1.0);
  auto d = dropout(ones, 0.1, LayerMode::Train, rng);
  double mean = 0, zeros = 0;
  for (double v : d.data()) {
    mean += v;
    zeros += v == 0.0;
  }
  mean /= d.size();
  zeros /= d.size();
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(std::abs(zeros - 0.1) < 0.001);

  // frozen mask: the layer is linear
  Tensor<double> mask;
  Rng fixed(12);
  dropout(x, 0.3, LayerMode::Train, fixed, &mask);
  const auto probe = random_tensor(x.shape(), rng);
  GradCheckTarget t;
  t.tensors = {{"x", &x}};
  t.objective = [&] {
    Rng r = Rng(12);
    return dot(dropout(x, 0.3, LayerMode::Train, r), probe);
  };
  t.analytic = [&] { return std::map<std::string, Tensor<double>>{{"x", dropout_backward(probe, mask)}}; };
  CHECK(grad_check(t, 1e-8).passed());
}

TEST_CASE("gaussian noise") {
  Rng rng(13);
  Tensor<double> z({1, 1000, 1000, 1}, 0.0);
  CHECK(gaussian_noise(z, 0.0, LayerMode::Train, rng).storage() == z.storage());
  CHECK(gaussian_noise(z, 0.03, LayerMode::Infer, rng).storage() == z.storage());
  auto n = gaussian_noise(z, 0.03, LayerMode::Train, rng);
  double m = 0, v = 0;
  for (double a : n.data()) m += a;
  m /= n.size();
  for (double a : n.data()) v += (a - m) * (a - m);
  CHECK(std::abs(std::sqrt(v / n.size()) - 0.03) < 0.02 * 0.03);
  CHECK_THROWS(gaussian_noise(z, -1.0, LayerMode::Train, rng));
}

TEST_CASE("max pool and nearest upsample") {
  Tensor<double> x({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  CHECK(max_pool(x, 2)[0] == 4.0);
  Tensor<double> ties({1, 2, 2, 1}, 7.0);
  std::vector<std::size_t> arg;
  max_pool(ties, 2, &arg);
  CHECK(arg[0] == 0);  // first index wins
  auto up = nearest_upsample(Tensor<double>({1, 1, 1, 1}, 3.5), 2);
  CHECK(up.shape() == Shape{1, 2, 2, 1});
  for (double v : up.data()) CHECK(v == 3.5);
  CHECK_THROWS_AS(max_pool(Tensor<double>({1, 3, 4, 1}), 2), ShapeError);

  Rng rng(14);
  auto a = random_tensor({2, 4, 6, 3}, rng);
  const auto probe = random_tensor({2, 2, 3, 3}, rng);
  GradCheckTarget t;
  t.tensors = {{"x", &a}};
  t.objective = [&] { return dot(max_pool(a, 2), probe); };
  t.analytic = [&] {
    std::vector<std::size_t> am;
    max_pool(a, 2, &am);
    return std::map<std::string, Tensor<double>>{{"x", max_pool_backward(probe, am, a.shape())}};
  };
  CHECK(grad_check(t, 1e-6).passed());

  auto b = random_tensor({1, 2, 3, 2, 2}, rng);
  const auto probe_up = random_tensor({1, 4, 6, 4, 2}, rng);
  GradCheckTarget tu;
  tu.tensors = {{"x", &b}};
  tu.objective = [&] { return dot(nearest_upsample(b, 2), probe_up); };
  tu.analytic = [&] { return std::map<std::string, Tensor<double>>{{"x", nearest_upsample_backward(probe_up, 2)}}; };
  CHECK(grad_check(tu, 1e-8).passed());
}

TEST_CASE("concat and add") {
  Rng rng(15);
  auto a = random_tensor({1, 2, 2, 2}, rng), b = random_tensor({1, 2, 2, 3}, rng);
  auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 2, 2, 5});
  auto [da, db] = concat_backward(c, 2);
  CHECK(da.storage() == a.storage());
  CHECK(db.storage() == b.storage());
  CHECK_THROWS_AS(concat_channels(a, Tensor<double>({1, 3, 2, 1})), ShapeError);
  auto s = add(a, a);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == 2 * a[i]);
}

TEST_CASE("grad_check: linear layer is exact, stack within tolerance, non-finite raises") {
  Rng rng(16);
  auto x = random_tensor({1, 3, 3, 2}, rng);
  auto w = random_tensor({1, 1, 2, 2}, rng);
  const auto probe = random_tensor({1, 3, 3, 2}, rng);
  GradCheckTarget lin;
  lin.tensors = {{"x", &x}, {"weights", &w}};
  lin.objective = [&] { return dot(conv(x, w, Tensor<double>{}), probe); };
  lin.analytic = [&] {
    auto g = conv_backward(x, w, probe, {1}, Padding::Same, false);
    return std::map<std::string, Tensor<double>>{{"x", g.input_grad}, {"weights", g.param_grads["weights"]}};
  };
  CHECK(grad_check(lin, 1e-8).passed());

  // conv -> relu -> batchnorm
  auto xs = random_tensor({2, 4, 4, 2}, rng);
  auto ws = random_tensor({3, 3, 2, 3}, rng);
  auto g = random_tensor({3}, rng, 1.0, 1.0), bt = random_tensor({3}, rng);
  const auto pr = random_tensor({2, 4, 4, 3}, rng);
  GradCheckTarget stack;
  stack.tensors = {{"x", &xs}, {"weights", &ws}, {"gamma", &g}, {"beta", &bt}};
  stack.objective = [&] { return dot(batch_norm_train<double>(relu(conv(xs, ws, Tensor<double>{})), g, bt, nullptr, nullptr), pr); };
  stack.analytic = [&] {
    auto h = conv(xs, ws, Tensor<double>{});
    auto r = relu(h);
    NormCache<double> cache;
    batch_norm_train(r, g, bt, &cache, nullptr);
    auto gb = batch_norm_backward(pr, g, cache);
    auto gc = conv_backward(xs, ws, relu_backward(h, gb.input_grad), {1}, Padding::Same, false);
    return std::map<std::string, Tensor<double>>{{"x", gc.input_grad},
                                                 {"weights", gc.param_grads["weights"]},
                                                 {"gamma", gb.param_grads["gamma"]},
                                                 {"beta", gb.param_grads["beta"]}};
  };
  const auto rep = grad_check(stack, 1e-4);
  CHECK_MESSAGE(rep.passed(), "worst ", rep.worst());

  GradCheckTarget bad;
  bad.tensors = {{"x", &x}};
  bad.objective = [] { return std::nan(""); };
  bad.analytic = [&] { return std::map<std::string, Tensor<double>>{{"x", x}}; };
  CHECK_THROWS_AS(grad_check(bad, 1e-4), NonFiniteError);
}

TEST_CASE("key=value grammar") {
  auto d = KeyValueDoc::parse("# comment\n a = 1 \n\nb=two words\n");
  CHECK(d.require("a") == "1");
  CHECK(d.get("b") == "two words");
  CHECK_FALSE(d.has("c"));
  CHECK_THROWS_AS(KeyValueDoc::parse("a=1\na=2\n"), KeyValueError);
  CHECK_THROWS_AS(KeyValueDoc::parse("novalue\n"), KeyValueError);
  CHECK_THROWS_AS(d.require("c"), KeyValueError);
  d.set("a", "3");
  CHECK(d.format() == "a=3\nb=two words\n");
  CHECK(parse_integer("42", "x") == 42);
  CHECK_THROWS_AS(parse_integer("4x", "x"), KeyValueError);
  CHECK(parse_bool("true", "x"));
}

}  // TEST_SUITE
