#include <algorithm>
#include <cstddef>

#include "modunet/kernels.hpp"

namespace modunet::kernels::reference {

namespace {

// Input coordinate for output position o and tap k along one axis, or -1 if it
// falls in the zero padding.
inline std::ptrdiff_t source(const ConvGeometry& g, int axis, std::size_t o, std::size_t k) {
  const auto i = static_cast<std::ptrdiff_t>(o * g.stride[axis] + k) - static_cast<std::ptrdiff_t>(g.pad_low[axis]);
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(g.in[axis])) return -1;
  return i;
}

template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oz = 0; oz < g.out[0]; ++oz)
      for (std::size_t oy = 0; oy < g.out[1]; ++oy)
        for (std::size_t ox = 0; ox < g.out[2]; ++ox)
          for (std::size_t kz = 0; kz < g.kernel[0]; ++kz)
            for (std::size_t ky = 0; ky < g.kernel[1]; ++ky)
              for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
                const auto iz = source(g, 0, oz, kz);
                const auto iy = source(g, 1, oy, ky);
                const auto ix = source(g, 2, ox, kx);
                if (iz < 0 || iy < 0 || ix < 0) continue;
                const std::size_t in_pos =
                    ((b * g.in[0] + iz) * g.in[1] + iy) * g.in[2] + static_cast<std::size_t>(ix);
                const std::size_t out_pos = ((b * g.out[0] + oz) * g.out[1] + oy) * g.out[2] + ox;
                const std::size_t tap = (kz * g.kernel[1] + ky) * g.kernel[2] + kx;
                f(in_pos, out_pos, tap);
              }
}

}  // namespace

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                  std::span<T> y) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  for (std::size_t p = 0; p < g.batch * g.out_spatial(); ++p)
    for (std::size_t co = 0; co < co_n; ++co) y[p * co_n + co] = bias.empty() ? T{0} : bias[co];
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t co = 0; co < co_n; ++co)
      for (std::size_t ci = 0; ci < ci_n; ++ci)
        y[out_pos * co_n + co] += x[in_pos * ci_n + ci] * w[(tap * ci_n + ci) * co_n + co];
  });
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  std::fill(dx.begin(), dx.end(), T{0});
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t ci = 0; ci < ci_n; ++ci)
      for (std::size_t co = 0; co < co_n; ++co)
        dx[in_pos * ci_n + ci] += dy[out_pos * co_n + co] * w[(tap * ci_n + ci) * co_n + co];
  });
}

template <typename T>
void conv_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                           std::span<T> dbias) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  std::fill(dw.begin(), dw.end(), T{0});
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t ci = 0; ci < ci_n; ++ci)
      for (std::size_t co = 0; co < co_n; ++co)
        dw[(tap * ci_n + ci) * co_n + co] += x[in_pos * ci_n + ci] * dy[out_pos * co_n + co];
  });
  if (!dbias.empty()) {
    std::fill(dbias.begin(), dbias.end(), T{0});
    for (std::size_t p = 0; p < g.batch * g.out_spatial(); ++p)
      for (std::size_t co = 0; co < co_n; ++co) dbias[co] += dy[p * co_n + co];
  }
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t c_n = g.in_channels;
  std::fill(y.begin(), y.end(), T{0});
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t c = 0; c < c_n; ++c) y[out_pos * c_n + c] += x[in_pos * c_n + c] * w[tap * c_n + c];
  });
}

template <typename T>
void depthwise_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  const std::size_t c_n = g.in_channels;
  std::fill(dx.begin(), dx.end(), T{0});
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t c = 0; c < c_n; ++c) dx[in_pos * c_n + c] += dy[out_pos * c_n + c] * w[tap * c_n + c];
  });
}

template <typename T>
void depthwise_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw) {
  const std::size_t c_n = g.in_channels;
  std::fill(dw.begin(), dw.end(), T{0});
  for_each_tap(g, [&](std::size_t in_pos, std::size_t out_pos, std::size_t tap) {
    for (std::size_t c = 0; c < c_n; ++c) dw[tap * c_n + c] += x[in_pos * c_n + c] * dy[out_pos * c_n + c];
  });
}

#define MODUNET_INSTANTIATE(T)                                                                                  \
  template void conv_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                std::span<T>);                                                                  \
  template void conv_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void conv_backward_weights<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,            \
                                         std::span<T>, std::span<T>);                                           \
  template void depthwise_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, std::span<T>);  \
  template void depthwise_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,         \
                                            std::span<T>);                                                      \
  template void depthwise_backward_weights<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,       \
                                              std::span<T>);

MODUNET_INSTANTIATE(float)
MODUNET_INSTANTIATE(double)

}  // namespace modunet::kernels::reference
