#include <algorithm>
#include <cstddef>
#include <vector>

#include "modunet/kernels.hpp"

namespace modunet::kernels::parallel {

namespace {

using Index = std::ptrdiff_t;

// Output coordinate whose tap k reads input coordinate i, or -1.
inline Index target(const ConvGeometry& g, int axis, std::size_t i, std::size_t k) {
  const Index t = static_cast<Index>(i + g.pad_low[axis]) - static_cast<Index>(k);
  const auto s = static_cast<Index>(g.stride[axis]);
  if (t < 0 || t % s != 0) return -1;
  const Index o = t / s;
  return o < static_cast<Index>(g.out[axis]) ? o : -1;
}

inline Index source(const ConvGeometry& g, int axis, std::size_t o, std::size_t k) {
  const Index i = static_cast<Index>(o * g.stride[axis] + k) - static_cast<Index>(g.pad_low[axis]);
  return (i < 0 || i >= static_cast<Index>(g.in[axis])) ? -1 : i;
}

inline std::size_t in_offset(const ConvGeometry& g, std::size_t b, Index z, Index y, Index x) {
  return ((b * g.in[0] + static_cast<std::size_t>(z)) * g.in[1] + static_cast<std::size_t>(y)) * g.in[2] +
         static_cast<std::size_t>(x);
}

inline std::size_t out_offset(const ConvGeometry& g, std::size_t b, Index z, Index y, Index x) {
  return ((b * g.out[0] + static_cast<std::size_t>(z)) * g.out[1] + static_cast<std::size_t>(y)) * g.out[2] +
         static_cast<std::size_t>(x);
}

// Sums per-batch partial buffers into `dst` in batch order.
template <typename T>
void reduce_partials(const std::vector<T>& partials, std::size_t count, std::size_t batch, std::span<T> dst) {
  std::fill(dst.begin(), dst.end(), T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = partials.data() + b * count;
    for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
  }
}

}  // namespace

template <typename T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<const T> bias,
                  std::span<T> y) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  const auto rows = static_cast<Index>(g.batch * g.out[0] * g.out[1]);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const std::size_t oy = static_cast<std::size_t>(row) % g.out[1];
    const std::size_t oz = (static_cast<std::size_t>(row) / g.out[1]) % g.out[0];
    const std::size_t b = static_cast<std::size_t>(row) / (g.out[1] * g.out[0]);
    for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
      T* yo = y.data() + out_offset(g, b, oz, oy, ox) * co_n;
      for (std::size_t co = 0; co < co_n; ++co) yo[co] = bias.empty() ? T{0} : bias[co];
      for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
        const Index iz = source(g, 0, oz, kz);
        if (iz < 0) continue;
        for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
          const Index iy = source(g, 1, oy, ky);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
            const Index ix = source(g, 2, ox, kx);
            if (ix < 0) continue;
            const T* xi = x.data() + in_offset(g, b, iz, iy, ix) * ci_n;
            const T* wt = w.data() + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * ci_n * co_n;
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              const T xv = xi[ci];
              const T* wr = wt + ci * co_n;
              for (std::size_t co = 0; co < co_n; ++co) yo[co] += xv * wr[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  const auto rows = static_cast<Index>(g.batch * g.in[0] * g.in[1]);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const std::size_t iy = static_cast<std::size_t>(row) % g.in[1];
    const std::size_t iz = (static_cast<std::size_t>(row) / g.in[1]) % g.in[0];
    const std::size_t b = static_cast<std::size_t>(row) / (g.in[1] * g.in[0]);
    for (std::size_t ix = 0; ix < g.in[2]; ++ix) {
      T* dxi = dx.data() + in_offset(g, b, iz, iy, ix) * ci_n;
      for (std::size_t ci = 0; ci < ci_n; ++ci) dxi[ci] = T{0};
      for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
        const Index oz = target(g, 0, iz, kz);
        if (oz < 0) continue;
        for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
          const Index oy = target(g, 1, iy, ky);
          if (oy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
            const Index ox = target(g, 2, ix, kx);
            if (ox < 0) continue;
            const T* dyo = dy.data() + out_offset(g, b, oz, oy, ox) * co_n;
            const T* wt = w.data() + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * ci_n * co_n;
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              const T* wr = wt + ci * co_n;
              T acc{0};
              for (std::size_t co = 0; co < co_n; ++co) acc += dyo[co] * wr[co];
              dxi[ci] += acc;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw,
                           std::span<T> dbias) {
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  const std::size_t wn = g.weight_size();
  std::vector<T> partial_w(g.batch * wn, T{0});
  std::vector<T> partial_b(dbias.empty() ? 0 : g.batch * co_n, T{0});
#pragma omp parallel for schedule(static)
  for (Index bi = 0; bi < static_cast<Index>(g.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    T* dwb = partial_w.data() + b * wn;
    for (std::size_t oz = 0; oz < g.out[0]; ++oz)
      for (std::size_t oy = 0; oy < g.out[1]; ++oy)
        for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
          const T* dyo = dy.data() + out_offset(g, b, oz, oy, ox) * co_n;
          if (!partial_b.empty()) {
            T* dbb = partial_b.data() + b * co_n;
            for (std::size_t co = 0; co < co_n; ++co) dbb[co] += dyo[co];
          }
          for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
            const Index iz = source(g, 0, oz, kz);
            if (iz < 0) continue;
            for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
              const Index iy = source(g, 1, oy, ky);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
                const Index ix = source(g, 2, ox, kx);
                if (ix < 0) continue;
                const T* xi = x.data() + in_offset(g, b, iz, iy, ix) * ci_n;
                T* wt = dwb + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * ci_n * co_n;
                for (std::size_t ci = 0; ci < ci_n; ++ci) {
                  const T xv = xi[ci];
                  T* wr = wt + ci * co_n;
                  for (std::size_t co = 0; co < co_n; ++co) wr[co] += xv * dyo[co];
                }
              }
            }
          }
        }
  }
  reduce_partials(partial_w, wn, g.batch, dw);
  if (!dbias.empty()) reduce_partials(partial_b, co_n, g.batch, dbias);
}

template <typename T>
void depthwise_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
  const std::size_t c_n = g.in_channels;
  const auto rows = static_cast<Index>(g.batch * g.out[0] * g.out[1]);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const std::size_t oy = static_cast<std::size_t>(row) % g.out[1];
    const std::size_t oz = (static_cast<std::size_t>(row) / g.out[1]) % g.out[0];
    const std::size_t b = static_cast<std::size_t>(row) / (g.out[1] * g.out[0]);
    for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
      T* yo = y.data() + out_offset(g, b, oz, oy, ox) * c_n;
      for (std::size_t c = 0; c < c_n; ++c) yo[c] = T{0};
      for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
        const Index iz = source(g, 0, oz, kz);
        if (iz < 0) continue;
        for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
          const Index iy = source(g, 1, oy, ky);
          if (iy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
            const Index ix = source(g, 2, ox, kx);
            if (ix < 0) continue;
            const T* xi = x.data() + in_offset(g, b, iz, iy, ix) * c_n;
            const T* wt = w.data() + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * c_n;
            for (std::size_t c = 0; c < c_n; ++c) yo[c] += xi[c] * wt[c];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w, std::span<T> dx) {
  const std::size_t c_n = g.in_channels;
  const auto rows = static_cast<Index>(g.batch * g.in[0] * g.in[1]);
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const std::size_t iy = static_cast<std::size_t>(row) % g.in[1];
    const std::size_t iz = (static_cast<std::size_t>(row) / g.in[1]) % g.in[0];
    const std::size_t b = static_cast<std::size_t>(row) / (g.in[1] * g.in[0]);
    for (std::size_t ix = 0; ix < g.in[2]; ++ix) {
      T* dxi = dx.data() + in_offset(g, b, iz, iy, ix) * c_n;
      for (std::size_t c = 0; c < c_n; ++c) dxi[c] = T{0};
      for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
        const Index oz = target(g, 0, iz, kz);
        if (oz < 0) continue;
        for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
          const Index oy = target(g, 1, iy, ky);
          if (oy < 0) continue;
          for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
            const Index ox = target(g, 2, ix, kx);
            if (ox < 0) continue;
            const T* dyo = dy.data() + out_offset(g, b, oz, oy, ox) * c_n;
            const T* wt = w.data() + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * c_n;
            for (std::size_t c = 0; c < c_n; ++c) dxi[c] += dyo[c] * wt[c];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward_weights(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy, std::span<T> dw) {
  const std::size_t c_n = g.in_channels;
  const std::size_t wn = g.depthwise_weight_size();
  std::vector<T> partial(g.batch * wn, T{0});
#pragma omp parallel for schedule(static)
  for (Index bi = 0; bi < static_cast<Index>(g.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    T* dwb = partial.data() + b * wn;
    for (std::size_t oz = 0; oz < g.out[0]; ++oz)
      for (std::size_t oy = 0; oy < g.out[1]; ++oy)
        for (std::size_t ox = 0; ox < g.out[2]; ++ox) {
          const T* dyo = dy.data() + out_offset(g, b, oz, oy, ox) * c_n;
          for (std::size_t kz = 0; kz < g.kernel[0]; ++kz) {
            const Index iz = source(g, 0, oz, kz);
            if (iz < 0) continue;
            for (std::size_t ky = 0; ky < g.kernel[1]; ++ky) {
              const Index iy = source(g, 1, oy, ky);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < g.kernel[2]; ++kx) {
                const Index ix = source(g, 2, ox, kx);
                if (ix < 0) continue;
                const T* xi = x.data() + in_offset(g, b, iz, iy, ix) * c_n;
                T* wt = dwb + ((kz * g.kernel[1] + ky) * g.kernel[2] + kx) * c_n;
                for (std::size_t c = 0; c < c_n; ++c) wt[c] += xi[c] * dyo[c];
              }
            }
          }
        }
  }
  reduce_partials(partial, wn, g.batch, dw);
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

}  // namespace modunet::kernels::parallel
