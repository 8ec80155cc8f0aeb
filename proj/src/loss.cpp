#include "alcn/loss.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace alcn {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Orthonormal 1-D DFT basis split into cosine and sine parts:
// A[k][n] = (cos(2 pi k n / N) - i sin(2 pi k n / N)) / sqrt(N). Both parts
// are symmetric.
template <typename T>
struct Basis {
  Mat<T> cos, sin;
  explicit Basis(int n) : cos(n, n), sin(n, n) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j) {
        // Reduce k*j mod n before the trig call to keep large indices exact.
        const double ang = 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / n;
        cos(k, j) = static_cast<T>(std::cos(ang) * scale);
        sin(k, j) = static_cast<T>(std::sin(ang) * scale);
      }
  }
};

template <typename T>
struct Plan2 {
  Basis<T> rows, cols;
  Plan2(int h, int w) : rows(h), cols(w) {}

  // F = A_H X A_W^T for a real plane X.
  void forward(const T* x, T* re, T* im, int h, int w) const {
    Eigen::Map<const Mat<T>> X(x, h, w);
    const Mat<T> P = rows.cos * X;
    const Mat<T> Q = rows.sin * X;
    Eigen::Map<Mat<T>>(re, h, w).noalias() = P * cols.cos - Q * cols.sin;
    Eigen::Map<Mat<T>>(im, h, w).noalias() = -(P * cols.sin + Q * cols.cos);
  }

  // Re(A_H^H G conj(A_W)) for a complex plane G: the adjoint of forward().
  void adjoint_real(const T* gre, const T* gim, T* out, int h, int w) const {
    Eigen::Map<const Mat<T>> Gr(gre, h, w), Gi(gim, h, w);
    const Mat<T> Mr = rows.cos * Gr - rows.sin * Gi;
    const Mat<T> Mi = rows.cos * Gi + rows.sin * Gr;
    Eigen::Map<Mat<T>>(out, h, w).noalias() = Mr * cols.cos - Mi * cols.sin;
  }
};

template <typename T>
void require_batch(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw std::invalid_argument(std::string(what) + ": expected (B, C, H, W), got " +
                                to_string(t.shape()));
}

// Weighted spectrum distance per sample; optionally the gradient w.r.t. x_rec
// scaled by grad_scale.
template <typename T>
std::vector<double> ffl_impl(const Tensor<T>& x, const Tensor<T>& x_rec, bool focal,
                             Tensor<T>* grad, double grad_scale) {
  require_same_shape(x, x_rec, "ffl");
  require_batch(x, "ffl");
  const int B = static_cast<int>(x.dim(0));
  const int C = static_cast<int>(x.dim(1));
  const int H = static_cast<int>(x.dim(2));
  const int W = static_cast<int>(x.dim(3));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t per = plane * C;
  const Plan2<T> plan(H, W);

  std::vector<double> per_sample(B, 0.0);
  if (grad) *grad = Tensor<T>(x.shape());

#pragma omp parallel for schedule(static)
  for (int b = 0; b < B; ++b) {
    AlignedVector<T> diff(per), dre(per), dim(per), weight(per, T{1});
    const T* xs = x.data() + b * per;
    const T* rs = x_rec.data() + b * per;
    for (std::size_t i = 0; i < per; ++i) diff[i] = rs[i] - xs[i];
    // The DFT is linear, so F(x_rec) - F(x) = F(x_rec - x).
    for (int c = 0; c < C; ++c)
      plan.forward(diff.data() + c * plane, dre.data() + c * plane, dim.data() + c * plane, H, W);
    if (focal) {
      T peak{0};
      for (std::size_t i = 0; i < per; ++i) {
        weight[i] = std::sqrt(dre[i] * dre[i] + dim[i] * dim[i]);
        peak = std::max(peak, weight[i]);
      }
      for (auto& w : weight) w = peak > T{0} ? w / peak : T{0};
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i)
      acc += static_cast<double>(weight[i]) * (static_cast<double>(dre[i]) * dre[i] +
                                               static_cast<double>(dim[i]) * dim[i]);
    per_sample[b] = acc / static_cast<double>(per);

    if (grad) {
      const T s = static_cast<T>(2.0 * grad_scale);
      for (std::size_t i = 0; i < per; ++i) {
        dre[i] *= weight[i] * s;
        dim[i] *= weight[i] * s;
      }
      T* g = grad->data() + b * per;
      for (int c = 0; c < C; ++c)
        plan.adjoint_real(dre.data() + c * plane, dim.data() + c * plane, g + c * plane, H, W);
    }
  }
  return per_sample;
}

}  // namespace

template <typename T>
Spectrum<T> dft2(const Tensor<T>& image) {
  if (image.rank() != 3)
    throw std::invalid_argument("dft2: expected (C, H, W), got " + to_string(image.shape()));
  for (T v : image.values())
    if (!std::isfinite(v)) throw std::invalid_argument("dft2: non-finite input value");
  const int C = static_cast<int>(image.dim(0));
  const int H = static_cast<int>(image.dim(1));
  const int W = static_cast<int>(image.dim(2));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Spectrum<T> s{image.shape(), std::vector<T>(image.size()), std::vector<T>(image.size())};
  const Plan2<T> plan(H, W);
  for (int c = 0; c < C; ++c)
    plan.forward(image.data() + c * plane, s.real.data() + c * plane, s.imag.data() + c * plane, H,
                 W);
  return s;
}

template <typename T>
T l2(const Tensor<T>& x, const Tensor<T>& x_rec, Tensor<T>* grad) {
  require_same_shape(x, x_rec, "l2");
  const std::size_t n = x.size();
  if (grad) *grad = Tensor<T>(x.shape());
  if (n == 0) return T{0};
  double acc = 0.0;
  const double scale = 2.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x_rec[i]) - x[i];
    acc += d * d;
    if (grad) (*grad)[i] = static_cast<T>(scale * d);
  }
  return static_cast<T>(acc / static_cast<double>(n));
}

template <typename T>
T ffl(const Tensor<T>& x, const Tensor<T>& x_rec, bool focal, Tensor<T>* grad) {
  if (x.size() == 0) {
    require_same_shape(x, x_rec, "ffl");
    if (grad) *grad = Tensor<T>(x.shape());
    return T{0};
  }
  const double total = static_cast<double>(x.size());
  const auto per = ffl_impl(x, x_rec, focal, grad, 1.0 / total);
  double acc = 0.0;
  for (double v : per) acc += v;
  return static_cast<T>(acc / static_cast<double>(per.size()));
}

template <typename T>
std::vector<double> l2_per_sample(const Tensor<T>& x, const Tensor<T>& x_rec) {
  require_same_shape(x, x_rec, "l2");
  if (x.empty()) return {};
  const std::size_t B = x.dim(0), per = sample_size(x);
  std::vector<double> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double d = static_cast<double>(x_rec[i]) - x[i];
      acc += d * d;
    }
    out[b] = acc / static_cast<double>(per);
  }
  return out;
}

template <typename T>
std::vector<double> ffl_per_sample(const Tensor<T>& x, const Tensor<T>& x_rec, bool focal) {
  if (x.empty()) return {};
  return ffl_impl(x, x_rec, focal, static_cast<Tensor<T>*>(nullptr), 0.0);
}

std::string to_string(LossKind kind) { return kind == LossKind::kL2 ? "l2" : "ffl"; }

LossKind parse_loss_kind(std::string_view s) {
  if (s == "l2") return LossKind::kL2;
  if (s == "ffl") return LossKind::kFfl;
  throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected l2 or ffl)");
}

void LossWeights::validate() const {
  if (!(lambda0 >= 0.0 && lambda1 >= 0.0))
    throw std::invalid_argument("loss weights must be non-negative");
  if (lambda0 == 0.0 && lambda1 == 0.0)
    throw std::invalid_argument("loss weights lambda0 and lambda1 cannot both be zero");
}

MinimaxLosses minimax_objective(double recon_loss, const LossWeights& weights) {
  return {weights.lambda0 * recon_loss, -weights.lambda1 * recon_loss};
}

#define ALCN_INSTANTIATE(T)                                                                  \
  template Spectrum<T> dft2<T>(const Tensor<T>&);                                            \
  template T l2<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                          \
  template T ffl<T>(const Tensor<T>&, const Tensor<T>&, bool, Tensor<T>*);                   \
  template std::vector<double> l2_per_sample<T>(const Tensor<T>&, const Tensor<T>&);         \
  template std::vector<double> ffl_per_sample<T>(const Tensor<T>&, const Tensor<T>&, bool);

ALCN_INSTANTIATE(float)
ALCN_INSTANTIATE(double)
#undef ALCN_INSTANTIATE

}  // namespace alcn
