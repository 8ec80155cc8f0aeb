#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "alcn/tensor.hpp"
#include "alcn/util.hpp"

namespace alcn {

/// Range the blend weight is drawn from each training step.
struct AlphaPolicy {
  double low = 0.2;
  double high = 0.9;
  /// One alpha per sample instead of one per step.
  bool per_sample = false;

  void validate() const;
  friend bool operator==(const AlphaPolicy&, const AlphaPolicy&) = default;
};

enum class NoiseKind { kNone, kBlackout, kSpeckle, kGaussian, kAlcn };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(std::string_view s);

struct NoiseStrategy {
  NoiseKind kind = NoiseKind::kAlcn;
  double p = 0.2;      // blackout / speckle pixel probability
  double sigma = 0.5;  // gaussian standard deviation
  AlphaPolicy alpha;   // alcn

  void validate() const;
  friend bool operator==(const NoiseStrategy&, const NoiseStrategy&) = default;
};

/// alpha * x + (1 - alpha) * n, elementwise. alpha in [0, 1].
template <typename T>
Tensor<T> blend(const Tensor<T>& x, const Tensor<T>& n, double alpha);

/// Per-sample variant: alphas has one entry, or one per leading index of x.
template <typename T>
Tensor<T> blend(const Tensor<T>& x, const Tensor<T>& n, std::span<const double> alphas);

double sample_alpha(const AlphaPolicy& policy, Rng& rng);

/// (batch, width) i.i.d. standard normal.
Tensor<float> sample_latent(std::size_t batch, Rng& rng, std::size_t width = 256);

/// Fixed corruption baselines. NoiseKind::kAlcn is rejected: that corruption
/// is learned and applied inside the training step.
Tensor<float> apply_strategy(const NoiseStrategy& strategy, const Tensor<float>& x, Rng& rng);

}  // namespace alcn
