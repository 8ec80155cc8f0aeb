#include <algorithm>

#include "alcn/kernels.hpp"

// Direct-loop kernels. Slow and obvious; the parallel kernels are tested
// against these.

namespace alcn::kernels::reference {
namespace {

inline std::size_t at4(int b, int c, int y, int x, int C, int H, int W) {
  return ((static_cast<std::size_t>(b) * C + c) * H + y) * W + x;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int k = g.kernel;
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          T acc = bias.empty() ? T{0} : bias[co];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += w[at4(co, ci, ky, kx, g.in_channels, k, k)] *
                       x[at4(b, ci, iy, ix, g.in_channels, g.in_h, g.in_w)];
              }
          y[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)] = acc;
        }
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const int k = g.kernel;
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(db.begin(), db.end(), T{0});
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const T d = dy[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)];
          if (!db.empty()) db[co] += d;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                const std::size_t wi = at4(co, ci, ky, kx, g.in_channels, k, k);
                const std::size_t xi = at4(b, ci, iy, ix, g.in_channels, g.in_h, g.in_w);
                if (!dw.empty()) dw[wi] += x[xi] * d;
                if (!dx.empty()) dx[xi] += w[wi] * d;
              }
        }
}

template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<const T> bias, std::span<T> y) {
  const int k = g.kernel;
  for (int b = 0; b < g.batch; ++b)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox)
          y[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)] = bias.empty() ? T{0} : bias[co];
  for (int b = 0; b < g.batch; ++b)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix) {
          const T v = x[at4(b, ci, iy, ix, g.in_channels, g.in_h, g.in_w)];
          for (int co = 0; co < g.out_channels; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky;
                const int ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= g.out_h || ox < 0 || ox >= g.out_w) continue;
                y[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)] +=
                    v * w[at4(ci, co, ky, kx, g.out_channels, k, k)];
              }
        }
}

template <typename T>
void conv_transpose2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                               std::span<const T> dy, std::span<T> dx, std::span<T> dw,
                               std::span<T> db) {
  const int k = g.kernel;
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(db.begin(), db.end(), T{0});
  if (!db.empty())
    for (int b = 0; b < g.batch; ++b)
      for (int co = 0; co < g.out_channels; ++co)
        for (int oy = 0; oy < g.out_h; ++oy)
          for (int ox = 0; ox < g.out_w; ++ox)
            db[co] += dy[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)];
  for (int b = 0; b < g.batch; ++b)
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int iy = 0; iy < g.in_h; ++iy)
        for (int ix = 0; ix < g.in_w; ++ix) {
          const std::size_t xi = at4(b, ci, iy, ix, g.in_channels, g.in_h, g.in_w);
          for (int co = 0; co < g.out_channels; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * g.stride - g.pad + ky;
                const int ox = ix * g.stride - g.pad + kx;
                if (oy < 0 || oy >= g.out_h || ox < 0 || ox >= g.out_w) continue;
                const T d = dy[at4(b, co, oy, ox, g.out_channels, g.out_h, g.out_w)];
                const std::size_t wi = at4(ci, co, ky, kx, g.out_channels, k, k);
                if (!dx.empty()) dx[xi] += w[wi] * d;
                if (!dw.empty()) dw[wi] += x[xi] * d;
              }
        }
}

template <typename T>
void dense_forward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out; ++o) {
      T acc = bias.empty() ? T{0} : bias[o];
      for (int i = 0; i < in; ++i)
        acc += w[static_cast<std::size_t>(o) * in + i] * x[static_cast<std::size_t>(b) * in + i];
      y[static_cast<std::size_t>(b) * out + o] = acc;
    }
}

template <typename T>
void dense_backward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  std::fill(dx.begin(), dx.end(), T{0});
  std::fill(dw.begin(), dw.end(), T{0});
  std::fill(db.begin(), db.end(), T{0});
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out; ++o) {
      const T d = dy[static_cast<std::size_t>(b) * out + o];
      if (!db.empty()) db[o] += d;
      for (int i = 0; i < in; ++i) {
        const std::size_t wi = static_cast<std::size_t>(o) * in + i;
        const std::size_t xi = static_cast<std::size_t>(b) * in + i;
        if (!dw.empty()) dw[wi] += x[xi] * d;
        if (!dx.empty()) dx[xi] += w[wi] * d;
      }
    }
}

#define ALCN_INSTANTIATE(T)                                                                    \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                           \
  template void conv2d_backward<T>(const ConvGeometry&, std::span<const T>,                    \
                                   std::span<const T>, std::span<const T>, std::span<T>,       \
                                   std::span<T>, std::span<T>);                                \
  template void conv_transpose2d_forward<T>(const ConvGeometry&, std::span<const T>,           \
                                            std::span<const T>, std::span<const T>,            \
                                            std::span<T>);                                     \
  template void conv_transpose2d_backward<T>(const ConvGeometry&, std::span<const T>,          \
                                             std::span<const T>, std::span<const T>,           \
                                             std::span<T>, std::span<T>, std::span<T>);        \
  template void dense_forward<T>(int, int, int, std::span<const T>, std::span<const T>,        \
                                 std::span<const T>, std::span<T>);                            \
  template void dense_backward<T>(int, int, int, std::span<const T>, std::span<const T>,       \
                                  std::span<const T>, std::span<T>, std::span<T>, std::span<T>);

ALCN_INSTANTIATE(float)
ALCN_INSTANTIATE(double)
#undef ALCN_INSTANTIATE

}  // namespace alcn::kernels::reference
