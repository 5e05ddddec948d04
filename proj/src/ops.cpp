#include "modunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace modunet {

namespace {

using kernels::ConvGeometry;

int spatial_rank_of(const Shape& x) {
  if (x.size() != 4 && x.size() != 5) {
    throw ShapeError("expected a (batch, spatial..., channels) tensor, got " + shape_str(x));
  }
  return static_cast<int>(x.size()) - 2;
}

std::array<std::size_t, 3> expand_stride(const Stride& stride, int sr) {
  std::array<std::size_t, 3> s{1, 1, 1};
  if (stride.size() != 1 && stride.size() != static_cast<std::size_t>(sr)) {
    throw std::invalid_argument("stride needs 1 or " + std::to_string(sr) + " entries");
  }
  for (int a = 0; a < sr; ++a) {
    const std::size_t v = stride.size() == 1 ? stride[0] : stride[a];
    if (v < 1) throw std::invalid_argument("stride must be >= 1");
    s[3 - sr + a] = v;
  }
  return s;
}

std::array<std::size_t, 3> spatial_of(const Shape& x) {
  const int sr = spatial_rank_of(x);
  std::array<std::size_t, 3> s{1, 1, 1};
  for (int a = 0; a < sr; ++a) s[3 - sr + a] = x[1 + a];
  return s;
}

Shape shape_from(std::size_t batch, const std::array<std::size_t, 3>& spatial, std::size_t channels, int sr) {
  Shape s{batch};
  for (int a = 3 - sr; a < 3; ++a) s.push_back(spatial[a]);
  s.push_back(channels);
  return s;
}

void same_padding(ConvGeometry& g) {
  for (int a = 0; a < 3; ++a) {
    g.out[a] = (g.in[a] + g.stride[a] - 1) / g.stride[a];
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>((g.out[a] - 1) * g.stride[a] + g.kernel[a]) -
                                 static_cast<std::ptrdiff_t>(g.in[a]);
    g.pad_low[a] = total > 0 ? static_cast<std::size_t>(total / 2) : 0;
  }
}

ConvGeometry depthwise_geometry(const Shape& x, const Shape& w, const Stride& stride, Padding padding) {
  const int sr = spatial_rank_of(x);
  if (w.size() != static_cast<std::size_t>(sr) + 2 || w.back() != 1) {
    throw ShapeError("depthwise kernel must be (k..., channels, 1), got " + shape_str(w));
  }
  ConvGeometry g = conv_geometry(x, w, stride, padding);
  g.out_channels = g.in_channels;
  return g;
}

ConvGeometry transposed_geometry(const Shape& x, const Shape& w, const Stride& stride) {
  const int sr = spatial_rank_of(x);
  if (w.size() != static_cast<std::size_t>(sr) + 2) {
    throw ShapeError("transposed kernel rank " + std::to_string(w.size()) + " does not match input " + shape_str(x));
  }
  if (x.back() != w[sr + 1]) {
    throw ShapeError("transposed_conv channel mismatch: input has " + std::to_string(x.back()) +
                     ", kernel expects " + std::to_string(w[sr + 1]));
  }
  ConvGeometry g;
  g.batch = x[0];
  g.stride = expand_stride(stride, sr);
  const auto small = spatial_of(x);
  for (int a = 0; a < sr; ++a) g.kernel[3 - sr + a] = w[a];
  for (int a = 0; a < 3; ++a) g.in[a] = small[a] * g.stride[a];
  same_padding(g);
  g.in_channels = w[sr];
  g.out_channels = w[sr + 1];
  return g;
}

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void check_channel_vector(const Tensor<T>& v, std::size_t channels, const char* what) {
  if (v.size() != channels) {
    throw ShapeError(std::string(what) + " needs one entry per channel (" + std::to_string(channels) + "), got " +
                     std::to_string(v.size()));
  }
}

}  // namespace

ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Stride& stride, Padding padding) {
  const int sr = spatial_rank_of(x);
  if (w.size() != static_cast<std::size_t>(sr) + 2) {
    throw ShapeError("kernel rank " + std::to_string(w.size()) + " does not match input " + shape_str(x));
  }
  if (x.back() != w[sr]) {
    throw ShapeError("conv channel mismatch: input has " + std::to_string(x.back()) + " channels, kernel expects " +
                     std::to_string(w[sr]));
  }
  ConvGeometry g;
  g.batch = x[0];
  g.in = spatial_of(x);
  g.stride = expand_stride(stride, sr);
  for (int a = 0; a < sr; ++a) g.kernel[3 - sr + a] = w[a];
  g.in_channels = w[sr];
  g.out_channels = w[sr + 1];
  if (padding == Padding::Same) {
    same_padding(g);
  } else {
    for (int a = 0; a < 3; ++a) {
      if (g.in[a] < g.kernel[a]) {
        throw ShapeError("Valid convolution leaves an empty spatial extent for input " + shape_str(x));
      }
      g.out[a] = (g.in[a] - g.kernel[a]) / g.stride[a] + 1;
      g.pad_low[a] = 0;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// convolutions

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, const Stride& stride,
               Padding padding) {
  const ConvGeometry g = conv_geometry(x.shape(), weights.shape(), stride, padding);
  if (!bias.empty()) check_channel_vector(bias, g.out_channels, "conv bias");
  Tensor<T> y(shape_from(g.batch, g.out, g.out_channels, spatial_rank_of(x.shape())));
  kernels::parallel::conv_forward<T>(g, x.data(), weights.data(), bias.data(), y.data());
  return y;
}

template <typename T>
LayerGrads<T> conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy, const Stride& stride,
                            Padding padding, bool with_bias) {
  const ConvGeometry g = conv_geometry(x.shape(), weights.shape(), stride, padding);
  const Shape out = shape_from(g.batch, g.out, g.out_channels, spatial_rank_of(x.shape()));
  if (dy.shape() != out) {
    throw ShapeError("conv_backward: dy shape " + shape_str(dy.shape()) + " != forward output " + shape_str(out));
  }
  LayerGrads<T> grads;
  grads.input_grad = Tensor<T>(x.shape());
  kernels::parallel::conv_backward_input<T>(g, dy.data(), weights.data(), grads.input_grad.data());
  Tensor<T> dw(weights.shape());
  Tensor<T> db;
  if (with_bias) db = Tensor<T>({g.out_channels});
  kernels::parallel::conv_backward_weights<T>(g, x.data(), dy.data(), dw.data(), db.data());
  grads.param_grads["weights"] = std::move(dw);
  if (with_bias) grads.param_grads["bias"] = std::move(db);
  return grads;
}

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& weights, const Stride& stride, Padding padding) {
  const ConvGeometry g = depthwise_geometry(x.shape(), weights.shape(), stride, padding);
  Tensor<T> y(shape_from(g.batch, g.out, g.out_channels, spatial_rank_of(x.shape())));
  kernels::parallel::depthwise_forward<T>(g, x.data(), weights.data(), y.data());
  return y;
}

template <typename T>
LayerGrads<T> depthwise_conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                                      const Stride& stride, Padding padding) {
  const ConvGeometry g = depthwise_geometry(x.shape(), weights.shape(), stride, padding);
  const Shape out = shape_from(g.batch, g.out, g.out_channels, spatial_rank_of(x.shape()));
  if (dy.shape() != out) throw ShapeError("depthwise_conv_backward: dy shape mismatch");
  LayerGrads<T> grads;
  grads.input_grad = Tensor<T>(x.shape());
  kernels::parallel::depthwise_backward_input<T>(g, dy.data(), weights.data(), grads.input_grad.data());
  Tensor<T> dw(weights.shape());
  kernels::parallel::depthwise_backward_weights<T>(g, x.data(), dy.data(), dw.data());
  grads.param_grads["weights"] = std::move(dw);
  return grads;
}

template <typename T>
Tensor<T> separable_conv(const Tensor<T>& x, const SeparableWeights<T>& weights, const Tensor<T>& bias,
                         const Stride& stride, Padding padding) {
  const Tensor<T> mid = depthwise_conv(x, weights.depthwise, stride, padding);
  return conv(mid, weights.pointwise, bias, {1}, Padding::Same);
}

template <typename T>
LayerGrads<T> separable_conv_backward(const Tensor<T>& x, const SeparableWeights<T>& weights, const Tensor<T>& dy,
                                      const Stride& stride, Padding padding) {
  const Tensor<T> mid = depthwise_conv(x, weights.depthwise, stride, padding);
  LayerGrads<T> pw = conv_backward(mid, weights.pointwise, dy, {1}, Padding::Same, true);
  LayerGrads<T> dw = depthwise_conv_backward(x, weights.depthwise, pw.input_grad, stride, padding);
  LayerGrads<T> grads;
  grads.input_grad = std::move(dw.input_grad);
  grads.param_grads["depthwise"] = std::move(dw.param_grads["weights"]);
  grads.param_grads["pointwise"] = std::move(pw.param_grads["weights"]);
  grads.param_grads["bias"] = std::move(pw.param_grads["bias"]);
  return grads;
}

template <typename T>
Tensor<T> transposed_conv(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, const Stride& stride) {
  const ConvGeometry g = transposed_geometry(x.shape(), weights.shape(), stride);
  Tensor<T> y(shape_from(g.batch, g.in, g.in_channels, spatial_rank_of(x.shape())));
  kernels::parallel::conv_backward_input<T>(g, x.data(), weights.data(), y.data());
  if (!bias.empty()) {
    check_channel_vector(bias, g.in_channels, "transposed_conv bias");
    const std::size_t c = g.in_channels;
    for (std::size_t p = 0; p < y.size() / c; ++p)
      for (std::size_t k = 0; k < c; ++k) y[p * c + k] += bias[k];
  }
  return y;
}

template <typename T>
LayerGrads<T> transposed_conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                                       const Stride& stride, bool with_bias) {
  const ConvGeometry g = transposed_geometry(x.shape(), weights.shape(), stride);
  const Shape out = shape_from(g.batch, g.in, g.in_channels, spatial_rank_of(x.shape()));
  if (dy.shape() != out) {
    throw ShapeError("transposed_conv_backward: dy shape " + shape_str(dy.shape()) + " != " + shape_str(out));
  }
  LayerGrads<T> grads;
  grads.input_grad = Tensor<T>(x.shape());
  kernels::parallel::conv_forward<T>(g, dy.data(), weights.data(), {}, grads.input_grad.data());
  Tensor<T> dw(weights.shape());
  kernels::parallel::conv_backward_weights<T>(g, dy.data(), x.data(), dw.data(), {});
  grads.param_grads["weights"] = std::move(dw);
  if (with_bias) {
    const std::size_t c = g.in_channels;
    Tensor<T> db({c});
    for (std::size_t p = 0; p < dy.size() / c; ++p)
      for (std::size_t k = 0; k < c; ++k) db[k] += dy[p * c + k];
    grads.param_grads["bias"] = std::move(db);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache,
                           BatchStats* stats) {
  const std::size_t c = x.channels();
  check_channel_vector(gamma, c, "batch_norm gamma");
  check_channel_vector(beta, c, "batch_norm beta");
  const std::size_t rows = x.size() / c;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) mean[k] += x[r * c + k];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const double d = x[r * c + k] - mean[k];
      var[k] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(rows);
  std::vector<double> inv_std(c);
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + kNormEpsilon);

  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      const double h = (x[i] - mean[k]) * inv_std[k];
      xhat[i] = static_cast<T>(h);
      y[i] = static_cast<T>(gamma[k] * h + beta[k]);
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = inv_std;
  }
  if (stats) {
    stats->mean = std::move(mean);
    stats->var = std::move(var);
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  const std::size_t c = x.channels();
  check_channel_vector(gamma, c, "batch_norm gamma");
  check_channel_vector(beta, c, "batch_norm beta");
  check_channel_vector(running_mean, c, "batch_norm running_mean");
  check_channel_vector(running_var, c, "batch_norm running_var");
  std::vector<T> scale(c), shift(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double s = gamma[k] / std::sqrt(static_cast<double>(running_var[k]) + kNormEpsilon);
    scale[k] = static_cast<T>(s);
    shift[k] = static_cast<T>(beta[k] - s * running_mean[k]);
  }
  Tensor<T> y(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) y[r * c + k] = x[r * c + k] * scale[k] + shift[k];
  return y;
}

template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var, const BatchStats& stats, double momentum) {
  if (momentum < 0.0 || momentum > 1.0) throw std::invalid_argument("batch_norm momentum must be in [0,1]");
  for (std::size_t k = 0; k < running_mean.size(); ++k) {
    running_mean[k] = static_cast<T>(momentum * running_mean[k] + (1.0 - momentum) * stats.mean[k]);
    running_var[k] = static_cast<T>(momentum * running_var[k] + (1.0 - momentum) * stats.var[k]);
  }
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, double momentum, LayerMode mode, NormCache<T>* cache) {
  if (momentum < 0.0 || momentum > 1.0) throw std::invalid_argument("batch_norm momentum must be in [0,1]");
  if (mode == LayerMode::Infer) return batch_norm_infer(x, gamma, beta, running_mean, running_var);
  check_channel_vector(running_mean, x.channels(), "batch_norm running_mean");
  check_channel_vector(running_var, x.channels(), "batch_norm running_var");
  BatchStats stats;
  Tensor<T> y = batch_norm_train(x, gamma, beta, cache, &stats);
  update_running_stats(running_mean, running_var, stats, momentum);
  return y;
}

template <typename T>
LayerGrads<T> batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const NormCache<T>& cache) {
  check_same(dy, cache.normalized, "batch_norm_backward");
  const std::size_t c = dy.channels();
  const std::size_t rows = dy.size() / c;
  const auto& xhat = cache.normalized;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      sum_dy[k] += dy[r * c + k];
      sum_dy_xhat[k] += static_cast<double>(dy[r * c + k]) * xhat[r * c + k];
    }
  LayerGrads<T> grads;
  grads.input_grad = Tensor<T>(dy.shape());
  const double m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      const double g = gamma[k] * cache.inv_std[k] / m;
      grads.input_grad[i] = static_cast<T>(g * (m * dy[i] - sum_dy[k] - xhat[i] * sum_dy_xhat[k]));
    }
  Tensor<T> dgamma({c}), dbeta({c});
  for (std::size_t k = 0; k < c; ++k) {
    dgamma[k] = static_cast<T>(sum_dy_xhat[k]);
    dbeta[k] = static_cast<T>(sum_dy[k]);
  }
  grads.param_grads["gamma"] = std::move(dgamma);
  grads.param_grads["beta"] = std::move(dbeta);
  return grads;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache) {
  const std::size_t c = x.channels();
  check_channel_vector(gamma, c, "layer_norm gamma");
  check_channel_vector(beta, c, "layer_norm beta");
  const std::size_t batch = x.dim(0);
  const std::size_t per = x.size() / batch;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<double> inv_std(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xs = x.ptr() + b * per;
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < per; ++i) mean += xs[i];
    mean /= static_cast<double>(per);
    for (std::size_t i = 0; i < per; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(per);
    inv_std[b] = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t i = 0; i < per; ++i) {
      const double h = (xs[i] - mean) * inv_std[b];
      xhat[b * per + i] = static_cast<T>(h);
      y[b * per + i] = static_cast<T>(gamma[i % c] * h + beta[i % c]);
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
LayerGrads<T> layer_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const NormCache<T>& cache) {
  check_same(dy, cache.normalized, "layer_norm_backward");
  const std::size_t c = dy.channels();
  const std::size_t batch = dy.dim(0);
  const std::size_t per = dy.size() / batch;
  const auto& xhat = cache.normalized;
  LayerGrads<T> grads;
  grads.input_grad = Tensor<T>(dy.shape());
  std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
  const double m = static_cast<double>(per);
  for (std::size_t b = 0; b < batch; ++b) {
    double sum_g = 0.0, sum_g_xhat = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = b * per + i;
      const double g = static_cast<double>(dy[j]) * gamma[i % c];
      sum_g += g;
      sum_g_xhat += g * xhat[j];
      dgamma[i % c] += static_cast<double>(dy[j]) * xhat[j];
      dbeta[i % c] += dy[j];
    }
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = b * per + i;
      const double g = static_cast<double>(dy[j]) * gamma[i % c];
      grads.input_grad[j] = static_cast<T>(cache.inv_std[b] / m * (m * g - sum_g - xhat[j] * sum_g_xhat));
    }
  }
  Tensor<T> tg({c}), tb({c});
  for (std::size_t k = 0; k < c; ++k) {
    tg[k] = static_cast<T>(dgamma[k]);
    tb[k] = static_cast<T>(dbeta[k]);
  }
  grads.param_grads["gamma"] = std::move(tg);
  grads.param_grads["beta"] = std::move(tb);
  return grads;
}

// ---------------------------------------------------------------------------
// activations and stochastic layers

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  check_same(x, dy, "relu_backward");
  Tensor<T> dx(x.shape());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return dx;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const std::size_t c = x.channels();
  const auto rows = static_cast<std::ptrdiff_t>(x.size() / c);
  Tensor<T> y(x.shape());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * c;
    T* yr = y.ptr() + r * c;
    const T mx = *std::max_element(xr, xr + c);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double e = std::exp(static_cast<double>(xr[k] - mx));
      yr[k] = static_cast<T>(e);
      sum += e;
    }
    for (std::size_t k = 0; k < c; ++k) yr[k] = static_cast<T>(yr[k] / sum);
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  check_same(y, dy, "softmax_backward");
  const std::size_t c = y.channels();
  const auto rows = static_cast<std::ptrdiff_t>(y.size() / c);
  Tensor<T> dx(y.shape());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t o = static_cast<std::size_t>(r) * c;
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += static_cast<double>(y[o + k]) * dy[o + k];
    for (std::size_t k = 0; k < c; ++k) dx[o + k] = static_cast<T>(y[o + k] * (dy[o + k] - s));
  }
  return dx;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, LayerMode mode, Rng& rng, Tensor<T>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (mode == LayerMode::Infer || rate == 0.0) {
    if (mask) *mask = Tensor<T>(x.shape(), T{1});
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> m(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = rng.uniform() < rate ? T{0} : keep_scale;
    y[i] = x[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const Tensor<T>& mask) {
  check_same(dy, mask, "dropout_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

template <typename T>
Tensor<T> gaussian_noise(const Tensor<T>& x, double std, LayerMode mode, Rng& rng) {
  if (std < 0.0) throw std::invalid_argument("gaussian_noise std must be >= 0");
  if (mode == LayerMode::Infer || std == 0.0) return x;
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(x[i] + std * rng.normal());
  return y;
}

// ---------------------------------------------------------------------------
// resampling and plumbing

namespace {
Grid checked_resample_grid(const Shape& shape, std::size_t factor, const char* what) {
  const Grid g = grid_of(shape);
  if (factor < 1) throw std::invalid_argument(std::string(what) + ": factor must be >= 1");
  const bool bad = g.height % factor || g.width % factor || (g.spatial_rank == 3 && g.depth % factor);
  if (bad) {
    throw ShapeError(std::string(what) + ": spatial extents of " + shape_str(shape) + " not divisible by " +
                     std::to_string(factor));
  }
  return g;
}
}  // namespace

template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, std::size_t window, std::vector<std::size_t>* argmax) {
  const Grid g = checked_resample_grid(x.shape(), window, "max_pool");
  const std::size_t fz = g.spatial_rank == 3 ? window : 1;
  Grid o = g;
  o.depth = g.depth / fz;
  o.height = g.height / window;
  o.width = g.width / window;
  Tensor<T> y(o.shape());
  std::vector<std::size_t> arg(y.size());
  const std::size_t c = g.channels;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t z = 0; z < o.depth; ++z)
      for (std::size_t yy = 0; yy < o.height; ++yy)
        for (std::size_t xx = 0; xx < o.width; ++xx)
          for (std::size_t k = 0; k < c; ++k) {
            std::size_t best = 0;
            bool first = true;
            for (std::size_t dz = 0; dz < fz; ++dz)
              for (std::size_t dy = 0; dy < window; ++dy)
                for (std::size_t dx = 0; dx < window; ++dx) {
                  const std::size_t idx =
                      (((b * g.depth + z * fz + dz) * g.height + yy * window + dy) * g.width + xx * window + dx) * c +
                      k;
                  if (first || x[idx] > x[best]) {
                    best = idx;
                    first = false;
                  }
                }
            const std::size_t oi = (((b * o.depth + z) * o.height + yy) * o.width + xx) * c + k;
            y[oi] = x[best];
            arg[oi] = best;
          }
  if (argmax) *argmax = std::move(arg);
  return y;
}

template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& dy, const std::vector<std::size_t>& argmax, const Shape& input_shape) {
  if (argmax.size() != dy.size()) throw ShapeError("max_pool_backward: argmax/dy size mismatch");
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t factor) {
  const Grid g = checked_resample_grid(x.shape(), 1, "nearest_upsample");
  if (factor < 1) throw std::invalid_argument("nearest_upsample: factor must be >= 1");
  const std::size_t fz = g.spatial_rank == 3 ? factor : 1;
  Grid o = g;
  o.depth = g.depth * fz;
  o.height = g.height * factor;
  o.width = g.width * factor;
  Tensor<T> y(o.shape());
  const std::size_t c = g.channels;
  for (std::size_t b = 0; b < o.batch; ++b)
    for (std::size_t z = 0; z < o.depth; ++z)
      for (std::size_t yy = 0; yy < o.height; ++yy)
        for (std::size_t xx = 0; xx < o.width; ++xx) {
          const T* src = x.ptr() + (((b * g.depth + z / fz) * g.height + yy / factor) * g.width + xx / factor) * c;
          T* dst = y.ptr() + (((b * o.depth + z) * o.height + yy) * o.width + xx) * c;
          std::copy(src, src + c, dst);
        }
  return y;
}

template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& dy, std::size_t factor) {
  const Grid g = checked_resample_grid(dy.shape(), factor, "nearest_upsample_backward");
  const std::size_t fz = g.spatial_rank == 3 ? factor : 1;
  Grid o = g;
  o.depth = g.depth / fz;
  o.height = g.height / factor;
  o.width = g.width / factor;
  Tensor<T> dx(o.shape());
  const std::size_t c = g.channels;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t z = 0; z < g.depth; ++z)
      for (std::size_t yy = 0; yy < g.height; ++yy)
        for (std::size_t xx = 0; xx < g.width; ++xx) {
          const T* src = dy.ptr() + (((b * g.depth + z) * g.height + yy) * g.width + xx) * c;
          T* dst = dx.ptr() + (((b * o.depth + z / fz) * o.height + yy / factor) * o.width + xx / factor) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t ca = a.channels(), cb = b.channels(), rows = a.size() / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor<T> y(so);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(a.ptr() + r * ca, a.ptr() + (r + 1) * ca, y.ptr() + r * (ca + cb));
    std::copy(b.ptr() + r * cb, b.ptr() + (r + 1) * cb, y.ptr() + r * (ca + cb) + ca);
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& dy, std::size_t channels_a) {
  const std::size_t c = dy.channels();
  if (channels_a == 0 || channels_a >= c) throw ShapeError("concat_backward: bad channel split");
  const std::size_t cb = c - channels_a, rows = dy.size() / c;
  Shape sa = dy.shape(), sb = dy.shape();
  sa.back() = channels_a;
  sb.back() = cb;
  Tensor<T> da(sa), db(sb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(dy.ptr() + r * c, dy.ptr() + r * c + channels_a, da.ptr() + r * channels_a);
    std::copy(dy.ptr() + r * c + channels_a, dy.ptr() + (r + 1) * c, db.ptr() + r * cb);
  }
  return {std::move(da), std::move(db)};
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "add");
  Tensor<T> y = a;
  accumulate(y, b);
  return y;
}

template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  check_same(a, b, "accumulate");
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  T* pa = a.ptr();
  const T* pb = b.ptr();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) pa[i] += pb[i];
}

#define MODUNET_INSTANTIATE_OPS(T)                                                                               \
  template Tensor<T> conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Stride&, Padding);         \
  template LayerGrads<T> conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Stride&,      \
                                       Padding, bool);                                                           \
  template Tensor<T> depthwise_conv(const Tensor<T>&, const Tensor<T>&, const Stride&, Padding);                 \
  template LayerGrads<T> depthwise_conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                                 const Stride&, Padding);                                        \
  template Tensor<T> separable_conv(const Tensor<T>&, const SeparableWeights<T>&, const Tensor<T>&, const Stride&, \
                                    Padding);                                                                    \
  template LayerGrads<T> separable_conv_backward(const Tensor<T>&, const SeparableWeights<T>&, const Tensor<T>&, \
                                                 const Stride&, Padding);                                        \
  template Tensor<T> transposed_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Stride&);       \
  template LayerGrads<T> transposed_conv_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                                  const Stride&, bool);                                          \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,    \
                                double, LayerMode, NormCache<T>*);                                               \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormCache<T>*,       \
                                      BatchStats*);                                                              \
  template Tensor<T> batch_norm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      const Tensor<T>&);                                                         \
  template void update_running_stats(Tensor<T>&, Tensor<T>&, const BatchStats&, double);                         \
  template LayerGrads<T> batch_norm_backward(const Tensor<T>&, const Tensor<T>&, const NormCache<T>&);           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormCache<T>*);            \
  template LayerGrads<T> layer_norm_backward(const Tensor<T>&, const Tensor<T>&, const NormCache<T>&);           \
  template Tensor<T> relu(const Tensor<T>&);                                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> dropout(const Tensor<T>&, double, LayerMode, Rng&, Tensor<T>*);                             \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> gaussian_noise(const Tensor<T>&, double, LayerMode, Rng&);                                  \
  template Tensor<T> max_pool(const Tensor<T>&, std::size_t, std::vector<std::size_t>*);                         \
  template Tensor<T> max_pool_backward(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);         \
  template Tensor<T> nearest_upsample(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> nearest_upsample_backward(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                        \
  template std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>&, std::size_t);                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                    \
  template void accumulate(Tensor<T>&, const Tensor<T>&);

MODUNET_INSTANTIATE_OPS(float)
MODUNET_INSTANTIATE_OPS(double)

}  // namespace modunet
