#include "alcn/corruption.hpp"

#include <algorithm>
#include <stdexcept>

namespace alcn {

void AlphaPolicy::validate() const {
  if (!(0.0 < low && low < high && high < 1.0))
    throw std::invalid_argument("alpha policy requires 0 < low < high < 1, got [" +
                                std::to_string(low) + ", " + std::to_string(high) + "]");
}

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kBlackout: return "blackout";
    case NoiseKind::kSpeckle: return "speckle";
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kAlcn: return "alcn";
  }
  return "?";
}

NoiseKind parse_noise_kind(std::string_view s) {
  for (NoiseKind k : {NoiseKind::kNone, NoiseKind::kBlackout, NoiseKind::kSpeckle,
                      NoiseKind::kGaussian, NoiseKind::kAlcn})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown noise strategy '" + std::string(s) +
                              "' (expected none, blackout, speckle, gaussian or alcn)");
}

void NoiseStrategy::validate() const {
  switch (kind) {
    case NoiseKind::kBlackout:
    case NoiseKind::kSpeckle:
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("strategy: p must be in [0, 1]");
      break;
    case NoiseKind::kGaussian:
      if (!(sigma >= 0.0)) throw std::invalid_argument("strategy: sigma must be >= 0");
      break;
    case NoiseKind::kAlcn:
      alpha.validate();
      break;
    case NoiseKind::kNone:
      break;
  }
}

template <typename T>
Tensor<T> blend(const Tensor<T>& x, const Tensor<T>& n, std::span<const double> alphas) {
  require_same_shape(x, n, "blend");
  if (x.empty()) return x;
  const std::size_t batch = x.dim(0);
  if (alphas.size() != 1 && alphas.size() != batch)
    throw std::invalid_argument("blend: expected 1 or " + std::to_string(batch) + " alphas");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("blend: alpha outside [0, 1]");
  Tensor<T> out(x.shape());
  const std::size_t per = sample_size(x);
  for (std::size_t b = 0; b < batch; ++b) {
    const T a = static_cast<T>(alphas.size() == 1 ? alphas[0] : alphas[b]);
    const T* xs = x.data() + b * per;
    const T* ns = n.data() + b * per;
    T* os = out.data() + b * per;
    for (std::size_t i = 0; i < per; ++i) os[i] = a * xs[i] + (T{1} - a) * ns[i];
  }
  return out;
}

template <typename T>
Tensor<T> blend(const Tensor<T>& x, const Tensor<T>& n, double alpha) {
  return blend(x, n, std::span<const double>(&alpha, 1));
}

template Tensor<float> blend(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> blend(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> blend(const Tensor<float>&, const Tensor<float>&, std::span<const double>);
template Tensor<double> blend(const Tensor<double>&, const Tensor<double>&,
                              std::span<const double>);

double sample_alpha(const AlphaPolicy& policy, Rng& rng) {
  policy.validate();
  return std::uniform_real_distribution<double>(policy.low, policy.high)(rng);
}

Tensor<float> sample_latent(std::size_t batch, Rng& rng, std::size_t width) {
  if (batch < 1) throw std::invalid_argument("sample_latent: batch size must be >= 1");
  Tensor<float> z({batch, width});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : z.values()) v = static_cast<float>(normal(rng));
  return z;
}

Tensor<float> apply_strategy(const NoiseStrategy& strategy, const Tensor<float>& x, Rng& rng) {
  strategy.validate();
  Tensor<float> out = x;
  switch (strategy.kind) {
    case NoiseKind::kNone:
      break;
    case NoiseKind::kBlackout: {
      std::bernoulli_distribution hit(strategy.p);
      for (auto& v : out.values())
        if (hit(rng)) v = 0.0f;
      break;
    }
    case NoiseKind::kSpeckle: {
      std::bernoulli_distribution hit(strategy.p);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& v : out.values())
        if (hit(rng)) v = static_cast<float>(unit(rng));
      break;
    }
    case NoiseKind::kGaussian: {
      if (strategy.sigma == 0.0) break;
      std::normal_distribution<double> noise(0.0, strategy.sigma);
      for (auto& v : out.values())
        v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
      break;
    }
    case NoiseKind::kAlcn:
      throw std::invalid_argument(
          "apply_strategy: alcn noise is generated by the adversarial training step "
          "(use train_step), not by a fixed corruption");
  }
  return out;
}

}  // namespace alcn
