#include "alcn/kernels.hpp"
#include "alcn/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace alcn::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Patch extraction over a (img_h, img_w) image sampled on a (grid_h, grid_w)
// strided grid. cols is (channels * k * k, batch * grid_h * grid_w).
template <typename T>
void im2col(int batch, int channels, int img_h, int img_w, int grid_h, int grid_w, int k, int s,
            int p, const T* img, T* cols) {
  const std::size_t grid = static_cast<std::size_t>(grid_h) * grid_w;
  const std::size_t plane = static_cast<std::size_t>(img_h) * img_w;
  const std::size_t ncols = grid * batch;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const T* src = img + (static_cast<std::size_t>(b) * channels + c) * plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* dst = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ncols + b * grid;
          for (int gy = 0; gy < grid_h; ++gy) {
            const int iy = gy * s - p + ky;
            T* row = dst + static_cast<std::size_t>(gy) * grid_w;
            if (iy < 0 || iy >= img_h) {
              std::fill(row, row + grid_w, T{0});
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * img_w;
            for (int gx = 0; gx < grid_w; ++gx) {
              const int ix = gx * s - p + kx;
              row[gx] = (ix >= 0 && ix < img_w) ? srow[ix] : T{0};
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patches back into a zeroed image.
template <typename T>
void col2im(int batch, int channels, int img_h, int img_w, int grid_h, int grid_w, int k, int s,
            int p, const T* cols, T* img) {
  const std::size_t grid = static_cast<std::size_t>(grid_h) * grid_w;
  const std::size_t plane = static_cast<std::size_t>(img_h) * img_w;
  const std::size_t ncols = grid * batch;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      T* dst = img + (static_cast<std::size_t>(b) * channels + c) * plane;
      std::fill(dst, dst + plane, T{0});
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* src =
              cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ncols + b * grid;
          for (int gy = 0; gy < grid_h; ++gy) {
            const int iy = gy * s - p + ky;
            if (iy < 0 || iy >= img_h) continue;
            const T* row = src + static_cast<std::size_t>(gy) * grid_w;
            T* drow = dst + static_cast<std::size_t>(iy) * img_w;
            for (int gx = 0; gx < grid_w; ++gx) {
              const int ix = gx * s - p + kx;
              if (ix >= 0 && ix < img_w) drow[ix] += row[gx];
            }
          }
        }
      }
    }
  }
}

// (B, C, P) <-> (C, B*P)
template <typename T>
void to_channel_major(int batch, int channels, std::size_t plane, const T* src, T* dst) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < channels; ++c)
    for (int b = 0; b < batch; ++b)
      std::memcpy(dst + (static_cast<std::size_t>(c) * batch + b) * plane,
                  src + (static_cast<std::size_t>(b) * channels + c) * plane, plane * sizeof(T));
}

template <typename T>
void from_channel_major(int batch, int channels, std::size_t plane, const T* src, const T* bias,
                        T* dst) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < channels; ++c) {
      const T* s = src + (static_cast<std::size_t>(c) * batch + b) * plane;
      T* d = dst + (static_cast<std::size_t>(b) * channels + c) * plane;
      const T bc = bias ? bias[c] : T{0};
      for (std::size_t i = 0; i < plane; ++i) d[i] = s[i] + bc;
    }
  }
}

template <typename T>
void channel_sums(int batch, int channels, std::size_t plane, const T* src, T* out) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    T acc{0};
    for (int b = 0; b < batch; ++b) {
      const T* s = src + (static_cast<std::size_t>(b) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += s[i];
    }
    out[c] = acc;
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int K = g.in_channels * g.kernel * g.kernel;
  const std::size_t N = g.out_plane() * g.batch;
  AlignedVector<T> cols(static_cast<std::size_t>(K) * N);
  im2col(g.batch, g.in_channels, g.in_h, g.in_w, g.out_h, g.out_w, g.kernel, g.stride, g.pad,
         x.data(), cols.data());
  AlignedVector<T> out(static_cast<std::size_t>(g.out_channels) * N);
  MapMat<T>(out.data(), g.out_channels, N).noalias() =
      CMapMat<T>(w.data(), g.out_channels, K) * CMapMat<T>(cols.data(), K, N);
  from_channel_major(g.batch, g.out_channels, g.out_plane(), out.data(),
                     bias.empty() ? nullptr : bias.data(), y.data());
}

template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  const int K = g.in_channels * g.kernel * g.kernel;
  const std::size_t N = g.out_plane() * g.batch;
  if (!db.empty()) channel_sums(g.batch, g.out_channels, g.out_plane(), dy.data(), db.data());
  if (dw.empty() && dx.empty()) return;
  AlignedVector<T> dout(static_cast<std::size_t>(g.out_channels) * N);
  to_channel_major(g.batch, g.out_channels, g.out_plane(), dy.data(), dout.data());
  CMapMat<T> dY(dout.data(), g.out_channels, N);
  if (!dw.empty()) {
    AlignedVector<T> cols(static_cast<std::size_t>(K) * N);
    im2col(g.batch, g.in_channels, g.in_h, g.in_w, g.out_h, g.out_w, g.kernel, g.stride, g.pad,
           x.data(), cols.data());
    MapMat<T>(dw.data(), g.out_channels, K).noalias() =
        dY * CMapMat<T>(cols.data(), K, N).transpose();
  }
  if (!dx.empty()) {
    AlignedVector<T> dcols(static_cast<std::size_t>(K) * N);
    MapMat<T>(dcols.data(), K, N).noalias() =
        CMapMat<T>(w.data(), g.out_channels, K).transpose() * dY;
    col2im(g.batch, g.in_channels, g.in_h, g.in_w, g.out_h, g.out_w, g.kernel, g.stride, g.pad,
           dcols.data(), dx.data());
  }
}

template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<const T> bias, std::span<T> y) {
  const int K = g.out_channels * g.kernel * g.kernel;
  const std::size_t N = g.in_plane() * g.batch;
  AlignedVector<T> xin(static_cast<std::size_t>(g.in_channels) * N);
  to_channel_major(g.batch, g.in_channels, g.in_plane(), x.data(), xin.data());
  AlignedVector<T> cols(static_cast<std::size_t>(K) * N);
  MapMat<T>(cols.data(), K, N).noalias() =
      CMapMat<T>(w.data(), g.in_channels, K).transpose() * CMapMat<T>(xin.data(), g.in_channels, N);
  col2im(g.batch, g.out_channels, g.out_h, g.out_w, g.in_h, g.in_w, g.kernel, g.stride, g.pad,
         cols.data(), y.data());
  if (!bias.empty()) {
    const std::size_t plane = g.out_plane();
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < g.batch; ++b)
      for (int c = 0; c < g.out_channels; ++c) {
        T* d = y.data() + (static_cast<std::size_t>(b) * g.out_channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) d[i] += bias[c];
      }
  }
}

template <typename T>
void conv_transpose2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                               std::span<const T> dy, std::span<T> dx, std::span<T> dw,
                               std::span<T> db) {
  const int K = g.out_channels * g.kernel * g.kernel;
  const std::size_t N = g.in_plane() * g.batch;
  if (!db.empty()) channel_sums(g.batch, g.out_channels, g.out_plane(), dy.data(), db.data());
  if (dw.empty() && dx.empty()) return;
  AlignedVector<T> dcols(static_cast<std::size_t>(K) * N);
  im2col(g.batch, g.out_channels, g.out_h, g.out_w, g.in_h, g.in_w, g.kernel, g.stride, g.pad,
         dy.data(), dcols.data());
  CMapMat<T> dC(dcols.data(), K, N);
  if (!dw.empty()) {
    AlignedVector<T> xin(static_cast<std::size_t>(g.in_channels) * N);
    to_channel_major(g.batch, g.in_channels, g.in_plane(), x.data(), xin.data());
    MapMat<T>(dw.data(), g.in_channels, K).noalias() =
        CMapMat<T>(xin.data(), g.in_channels, N) * dC.transpose();
  }
  if (!dx.empty()) {
    AlignedVector<T> dxin(static_cast<std::size_t>(g.in_channels) * N);
    MapMat<T>(dxin.data(), g.in_channels, N).noalias() =
        CMapMat<T>(w.data(), g.in_channels, K) * dC;
    from_channel_major<T>(g.batch, g.in_channels, g.in_plane(), dxin.data(), nullptr, dx.data());
  }
}

template <typename T>
void dense_forward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  MapMat<T> Y(y.data(), batch, out);
  Y.noalias() = CMapMat<T>(x.data(), batch, in) * CMapMat<T>(w.data(), out, in).transpose();
  if (!bias.empty()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out);
    Y.rowwise() += b;
  }
}

template <typename T>
void dense_backward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db) {
  CMapMat<T> dY(dy.data(), batch, out);
  if (!db.empty())
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), out) = dY.colwise().sum();
  if (!dw.empty())
    MapMat<T>(dw.data(), out, in).noalias() = dY.transpose() * CMapMat<T>(x.data(), batch, in);
  if (!dx.empty())
    MapMat<T>(dx.data(), batch, in).noalias() = dY * CMapMat<T>(w.data(), out, in);
}

template <typename T>
void leaky_relu_forward(std::span<T> v, T slope) {
  const std::size_t n = v.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > T{0} ? v[i] : slope * v[i];
}

template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> dv, T slope) {
  const std::size_t n = dv.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) dv[i] = pre[i] > T{0} ? dv[i] : slope * dv[i];
}

template <typename T>
void sigmoid_forward(std::span<T> v) {
  const std::size_t n = v.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) v[i] = T{1} / (T{1} + std::exp(-v[i]));
}

template <typename T>
void sigmoid_backward(std::span<const T> out, std::span<T> dv) {
  const std::size_t n = dv.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) dv[i] *= out[i] * (T{1} - out[i]);
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
                                  std::span<const T>, std::span<T>, std::span<T>,              \
                                  std::span<T>);                                               \
  template void leaky_relu_forward<T>(std::span<T>, T);                                        \
  template void leaky_relu_backward<T>(std::span<const T>, std::span<T>, T);                   \
  template void sigmoid_forward<T>(std::span<T>);                                              \
  template void sigmoid_backward<T>(std::span<const T>, std::span<T>);

ALCN_INSTANTIATE(float)
ALCN_INSTANTIATE(double)
#undef ALCN_INSTANTIATE

}  // namespace alcn::kernels
