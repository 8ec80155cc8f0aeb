#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "alcn/tensor.hpp"

namespace alcn {

/// Orthonormal 2-D DFT of a (C, H, W) image, stored as separate real and
/// imaginary planes of the same shape.
template <typename T>
struct Spectrum {
  Shape shape;
  std::vector<T> real;
  std::vector<T> imag;
};

/// Per-channel 2-D DFT scaled by 1/sqrt(H*W), so energy is preserved.
/// Throws std::invalid_argument on non-finite input.
template <typename T>
Spectrum<T> dft2(const Tensor<T>& image);

/// Mean squared error over every element. When grad is non-null it receives
/// d loss / d x_rec.
template <typename T>
T l2(const Tensor<T>& x, const Tensor<T>& x_rec, Tensor<T>* grad = nullptr);

/// Focal frequency loss over (B, C, H, W) batches: the mean over batch,
/// channels and frequency bins of w * |F(x) - F(x_rec)|^2. With focal = false
/// w = 1; otherwise w is the spectrum gap normalised by its per-image maximum,
/// held constant for differentiation.
template <typename T>
T ffl(const Tensor<T>& x, const Tensor<T>& x_rec, bool focal, Tensor<T>* grad = nullptr);

/// Per-sample reductions of the two losses (length B).
template <typename T>
std::vector<double> l2_per_sample(const Tensor<T>& x, const Tensor<T>& x_rec);
template <typename T>
std::vector<double> ffl_per_sample(const Tensor<T>& x, const Tensor<T>& x_rec, bool focal);

enum class LossKind { kL2, kFfl };
std::string to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view s);

/// Reconstruction loss selection used by training.
struct ReconLoss {
  LossKind kind = LossKind::kFfl;
  bool focal = true;

  template <typename T>
  T operator()(const Tensor<T>& x, const Tensor<T>& x_rec, Tensor<T>* grad = nullptr) const {
    return kind == LossKind::kL2 ? l2(x, x_rec, grad) : ffl(x, x_rec, focal, grad);
  }
  friend bool operator==(const ReconLoss&, const ReconLoss&) = default;
};

struct LossWeights {
  double lambda0 = 1.0;  // denoiser
  double lambda1 = 1.0;  // noise generator

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct MinimaxLosses {
  double denoiser;  // minimised by the denoiser
  double noisegen;  // minimised by the noise generator, i.e. reconstruction error is ascended
};

MinimaxLosses minimax_objective(double recon_loss, const LossWeights& weights);

}  // namespace alcn
