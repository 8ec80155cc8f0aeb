#pragma once

// Layer kernels used by both networks.
//
// Two implementations share one signature set:
//   alcn::kernels            im2col + Eigen GEMM, OpenMP over batch/channel planes
//   alcn::kernels::reference direct serial loops, kept as the testing oracle
//
// All tensors are row-major. Convolution weights are (Cout, Cin, k, k);
// transposed-convolution weights are (Cin, Cout, k, k). Optional outputs are
// skipped when passed an empty span. Backward kernels overwrite their outputs.

#include <cstddef>
#include <span>

namespace alcn::kernels {

/// Geometry of a strided 2-D (transposed) convolution layer in terms of its own
/// input and output. A transposed convolution is the adjoint of the convolution
/// with in/out swapped, so it requires conv_out_extent(out_h) == in_h.
struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int in_h = 1, in_w = 1;
  int out_h = 1, out_w = 1;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  std::size_t in_plane() const { return static_cast<std::size_t>(in_h) * in_w; }
  std::size_t out_plane() const { return static_cast<std::size_t>(out_h) * out_w; }
  std::size_t patch() const { return static_cast<std::size_t>(kernel) * kernel; }
};

/// Output extent of a conv with the given geometry parameters.
constexpr int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---- convolution: x (B, Cin, in_h, in_w) -> y (B, Cout, out_h, out_w)
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db);

// ---- transposed convolution: x (B, Cin, in_h, in_w) -> y (B, Cout, out_h, out_w)
template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<const T> bias, std::span<T> y);
template <typename T>
void conv_transpose2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                               std::span<const T> dy, std::span<T> dx, std::span<T> dw,
                               std::span<T> db);

// ---- dense: x (B, in) -> y (B, out), w (out, in)
template <typename T>
void dense_forward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <typename T>
void dense_backward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db);

// ---- elementwise activations (in place forward; backward uses the forward output)
template <typename T>
void leaky_relu_forward(std::span<T> v, T slope);
/// `pre` is the activation input; dv is scaled in place.
template <typename T>
void leaky_relu_backward(std::span<const T> pre, std::span<T> dv, T slope);
template <typename T>
void sigmoid_forward(std::span<T> v);
/// `out` is the sigmoid output; dv is scaled in place.
template <typename T>
void sigmoid_backward(std::span<const T> out, std::span<T> dv);

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                     std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db);
template <typename T>
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                              std::span<const T> bias, std::span<T> y);
template <typename T>
void conv_transpose2d_backward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                               std::span<const T> dy, std::span<T> dx, std::span<T> dw,
                               std::span<T> db);
template <typename T>
void dense_forward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <typename T>
void dense_backward(int batch, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw, std::span<T> db);

}  // namespace reference

}  // namespace alcn::kernels
