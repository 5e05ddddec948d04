#pragma once

// Differentiable layer primitives. Every forward op has a matching backward op
// taking the output cotangent `dy`; nothing here builds a graph.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "modunet/kernels.hpp"
#include "modunet/rng.hpp"
#include "modunet/tensor.hpp"

namespace modunet {

enum class Padding { Same, Valid };
enum class LayerMode { Train, Infer };

/// Per spatial axis stride; a single entry applies to every axis.
using Stride = std::vector<std::size_t>;

inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
struct LayerGrads {
  Tensor<T> input_grad;
  std::map<std::string, Tensor<T>> param_grads;
};

template <typename T>
struct SeparableWeights {
  Tensor<T> depthwise;  // (k..., channels, 1)
  Tensor<T> pointwise;  // (1..., in_channels, out_channels)
};

/// Geometry of a convolution of `x` by kernel `w` ((k..., in, out)). Throws on
/// rank or channel mismatch, stride 0, or an empty Valid output.
kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Stride& stride, Padding padding);

// Convolution. `bias` may be an empty tensor.
template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, const Stride& stride = {1},
               Padding padding = Padding::Same);
template <typename T>
LayerGrads<T> conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                            const Stride& stride = {1}, Padding padding = Padding::Same, bool with_bias = true);

template <typename T>
Tensor<T> depthwise_conv(const Tensor<T>& x, const Tensor<T>& weights, const Stride& stride = {1},
                         Padding padding = Padding::Same);
template <typename T>
LayerGrads<T> depthwise_conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                                      const Stride& stride = {1}, Padding padding = Padding::Same);

/// Depthwise then pointwise; the bias belongs to the pointwise stage.
template <typename T>
Tensor<T> separable_conv(const Tensor<T>& x, const SeparableWeights<T>& weights, const Tensor<T>& bias,
                         const Stride& stride = {1}, Padding padding = Padding::Same);
template <typename T>
LayerGrads<T> separable_conv_backward(const Tensor<T>& x, const SeparableWeights<T>& weights, const Tensor<T>& dy,
                                      const Stride& stride = {1}, Padding padding = Padding::Same);

/// Adjoint of the Same-padded strided convolution. Weights are laid out
/// (k..., out_channels, in_channels), so the same tensor drives the matching
/// forward convolution from the large grid to the small one.
template <typename T>
Tensor<T> transposed_conv(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, const Stride& stride);
template <typename T>
LayerGrads<T> transposed_conv_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy,
                                       const Stride& stride, bool with_bias = true);

// Normalization. The cache is filled in by Train-mode forwards and consumed by backward.
template <typename T>
struct NormCache {
  Tensor<T> normalized;
  std::vector<double> inv_std;  // one per channel (batch norm) or per sample (layer norm)
};

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

/// Train mode normalizes with batch statistics and updates
/// running <- momentum * running + (1 - momentum) * batch. Infer mode reads the
/// running statistics only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, double momentum, LayerMode mode, NormCache<T>* cache = nullptr);
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache,
                           BatchStats* stats);
template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var);
template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var, const BatchStats& stats, double momentum);
template <typename T>
LayerGrads<T> batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const NormCache<T>& cache);

/// Normalizes each sample over all of its non-batch axes; gamma/beta are per channel.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormCache<T>* cache = nullptr);
template <typename T>
LayerGrads<T> layer_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const NormCache<T>& cache);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy);

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);
/// Backward through softmax given its output `y`.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy);

/// `mask`, when given, receives the per-element scale (0 or 1/(1-rate)).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, LayerMode mode, Rng& rng, Tensor<T>* mask = nullptr);
template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const Tensor<T>& mask);

/// Adds i.i.d. N(0, std^2) in Train mode. Its backward is the identity.
template <typename T>
Tensor<T> gaussian_noise(const Tensor<T>& x, double std, LayerMode mode, Rng& rng);

/// Non-overlapping max pooling with window `window` on every spatial axis.
/// `argmax` receives the flat input index chosen for each output element.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, std::size_t window, std::vector<std::size_t>* argmax = nullptr);
template <typename T>
Tensor<T> max_pool_backward(const Tensor<T>& dy, const std::vector<std::size_t>& argmax, const Shape& input_shape);

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t factor);
template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& dy, std::size_t factor);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& dy, std::size_t channels_a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
/// In-place a += b.
template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b);

}  // namespace modunet
