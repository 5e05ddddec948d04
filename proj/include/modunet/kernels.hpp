#pragma once

// Low-level convolution kernels over channels-last buffers.
//
// Two implementations share these signatures:
//   reference::  plain serial loops, written for readability; used as the
//                comparison baseline in tests and benchmarks.
//   parallel::   OpenMP version used by the layer ops. Every reduction is done
//                in a fixed order, so results do not depend on the thread count.
//
// Weight layout is (kd, kh, kw, in_channels, out_channels). Depthwise weights
// are (kd, kh, kw, channels). All outputs are overwritten, not accumulated.

#include <array>
#include <cstddef>
#include <span>

namespace modunet::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::array<std::size_t, 3> in{1, 1, 1};  // depth, height, width
  std::array<std::size_t, 3> out{1, 1, 1};
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad_low{0, 0, 0};
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  std::size_t in_spatial() const noexcept { return in[0] * in[1] * in[2]; }
  std::size_t out_spatial() const noexcept { return out[0] * out[1] * out[2]; }
  std::size_t kernel_volume() const noexcept { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t input_size() const noexcept { return batch * in_spatial() * in_channels; }
  std::size_t output_size() const noexcept { return batch * out_spatial() * out_channels; }
  std::size_t weight_size() const noexcept { return kernel_volume() * in_channels * out_channels; }
  std::size_t depthwise_weight_size() const noexcept { return kernel_volume() * in_channels; }
};

#define MODUNET_DECLARE_CONV_KERNELS                                                                         \
  template <typename T>                                                                                      \
  void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,                     \
                    std::span<const T> bias, std::span<T> y);                                                \
  template <typename T>                                                                                      \
  void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,             \
                           std::span<T> dx);                                                                 \
  template <typename T>                                                                                      \
  void conv_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,           \
                             std::span<T> dw, std::span<T> dbias);                                           \
  template <typename T>                                                                                      \
  void depthwise_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y); \
  template <typename T>                                                                                      \
  void depthwise_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,        \
                                std::span<T> dx);                                                            \
  template <typename T>                                                                                      \
  void depthwise_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,      \
                                  std::span<T> dw);

// An empty `bias` / `dbias` span means "no bias".
namespace reference {
MODUNET_DECLARE_CONV_KERNELS
}

namespace parallel {
MODUNET_DECLARE_CONV_KERNELS
}

#undef MODUNET_DECLARE_CONV_KERNELS

}  // namespace modunet::kernels
