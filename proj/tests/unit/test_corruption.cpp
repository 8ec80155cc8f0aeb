#include <doctest.h>

#include <algorithm>
#include <random>

#include "alcn/corruption.hpp"
#include "alcn/model.hpp"
#include "oracles.hpp"

using namespace alcn;

namespace {

Tensor<float> random_image(Shape shape, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST_SUITE("corruption") {
  TEST_CASE("blend limits and arithmetic") {
    Rng rng(1);
    const auto x = random_image({3, 1, 5, 5}, rng);
    const auto n = random_image({3, 1, 5, 5}, rng);
    CHECK(blend(x, n, 1.0) == x);
    CHECK(blend(x, n, 0.0) == n);
    const Tensor<double> a({1}, 0.2), b({1}, 0.6);
    CHECK(blend(a, b, 0.5)[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(blend(x, Tensor<float>({3, 1, 5, 4}), 0.5), std::invalid_argument);
    CHECK_THROWS_AS(blend(x, n, 1.5), std::invalid_argument);
  }

  TEST_CASE("blend stays in the convex hull and is monotone") {
    Rng rng(2);
    std::uniform_real_distribution<double> ua(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      const auto x = random_image({2, 1, 4, 4}, rng);
      const auto n = random_image({2, 1, 4, 4}, rng);
      const double alpha = ua(rng);
      const auto y = blend(x, n, alpha);
      for (std::size_t i = 0; i < y.size(); ++i) {
        REQUIRE(y[i] >= std::min(x[i], n[i]));
        REQUIRE(y[i] <= std::max(x[i], n[i]));
      }
      auto x2 = x;
      for (auto& v : x2.values()) v = std::min(1.0f, v + 0.1f);
      const auto y2 = blend(x2, n, alpha);
      for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y2[i] >= y[i]);
    }
  }

  TEST_CASE("per-sample blend uses one alpha per leading index") {
    Rng rng(3);
    const auto x = random_image({2, 1, 3, 3}, rng);
    const auto n = random_image({2, 1, 3, 3}, rng);
    const std::vector<double> alphas{0.3, 0.8};
    const auto y = blend(x, n, std::span<const double>(alphas));
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(y[i] == doctest::Approx(0.3 * x[i] + 0.7 * n[i]).epsilon(1e-6));
      CHECK(y[9 + i] == doctest::Approx(0.8 * x[9 + i] + 0.2 * n[9 + i]).epsilon(1e-6));
    }
    const std::vector<double> one{0.4};
    CHECK(blend(x, n, std::span<const double>(one)) == blend(x, n, 0.4));
    const std::vector<double> three{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(blend(x, n, std::span<const double>(three)), std::invalid_argument);
  }

  TEST_CASE("two distinct alphas never collapse to the same corruption") {
    Rng rng(4);
    const auto n = random_image({1, 1, 4, 4}, rng);
    auto x = random_image({1, 1, 4, 4}, rng);
    const auto y1 = blend(x, n, 0.3), y2 = blend(x, n, 0.7);
    bool differs = false;
    for (std::size_t i = 0; i < x.size(); ++i) differs |= y1[i] != y2[i];
    CHECK(differs);
  }

  TEST_CASE("alpha samples stay within the default bounds") {
    Rng rng(5);
    const AlphaPolicy policy;
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double a = sample_alpha(policy, rng);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    CHECK(lo >= 0.2);
    CHECK(hi <= 0.9);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) sum += sample_alpha(policy, rng);
    CHECK(std::abs(sum / 100000 - 0.55) <= 0.01);
    Rng r1(9), r2(9);
    for (int i = 0; i < 10; ++i) CHECK(sample_alpha(policy, r1) == sample_alpha(policy, r2));
  }

  TEST_CASE("alpha policy validation") {
    CHECK_NOTHROW(AlphaPolicy{}.validate());
    CHECK_THROWS_AS((AlphaPolicy{0.0, 0.9, false}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AlphaPolicy{0.5, 0.4, false}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((AlphaPolicy{0.2, 1.0, false}.validate()), std::invalid_argument);
  }

  TEST_CASE("latent samples are standard normal") {
    Rng rng(6);
    const auto z = sample_latent(4096, rng);
    CHECK(z.shape() == Shape{4096, 256});
    double mean = 0.0;
    for (float v : z.values()) mean += v;
    mean /= static_cast<double>(z.size());
    double var = 0.0;
    for (float v : z.values()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.size());
    CHECK(std::abs(mean) <= 0.01);
    CHECK(std::abs(var - 1.0) <= 0.02);
    CHECK(sample_latent(7, rng).shape() == Shape{7, 256});
    Rng r1(3), r2(3);
    CHECK(sample_latent(5, r1) == sample_latent(5, r2));
  }

  TEST_CASE("noise generator output lies in the open unit interval") {
    const auto g = init_params(ArchSpec::noise_generator(1, 28, {8, 16, 16}), 7);
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
      auto z = sample_latent(16, rng);
      for (auto& v : z.values()) v *= 10.0f;
      const auto n = forward_noise_generator(g, z);
      for (float v : n.values()) {
        REQUIRE(v > 0.0f);
        REQUIRE(v < 1.0f);
      }
    }
  }

  TEST_CASE("fixed strategies") {
    Rng rng(8);
    const auto x = random_image({4, 1, 8, 8}, rng);
    NoiseStrategy s;
    s.kind = NoiseKind::kNone;
    CHECK(apply_strategy(s, x, rng) == x);

    s.kind = NoiseKind::kBlackout;
    s.p = 1.0;
    {
      const auto y = apply_strategy(s, x, rng);
      for (float v : y.values()) CHECK(v == 0.0f);
    }
    s.p = 0.0;
    CHECK(apply_strategy(s, x, rng) == x);
    s.p = 0.5;
    {
      const auto y = apply_strategy(s, x, rng);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK((y[i] == 0.0f || y[i] == x[i]));
    }

    s.kind = NoiseKind::kSpeckle;
    s.p = 0.0;
    CHECK(apply_strategy(s, x, rng) == x);
    s.p = 1.0;
    {
      const auto y = apply_strategy(s, x, rng);
      int changed = 0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] >= 0.0f);
        CHECK(y[i] <= 1.0f);
        changed += y[i] != x[i];
      }
      CHECK(changed > static_cast<int>(y.size()) / 2);
    }

    s.kind = NoiseKind::kGaussian;
    s.sigma = 0.0;
    CHECK(apply_strategy(s, x, rng) == x);
    s.sigma = 0.5;
    {
      const auto y = apply_strategy(s, x, rng);
      for (float v : y.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }

    s.kind = NoiseKind::kAlcn;
    CHECK_THROWS_AS(apply_strategy(s, x, rng), std::invalid_argument);
  }

  TEST_CASE("noise kind names round-trip") {
    for (auto k : {NoiseKind::kNone, NoiseKind::kBlackout, NoiseKind::kSpeckle, NoiseKind::kGaussian,
                   NoiseKind::kAlcn})
      CHECK(parse_noise_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_noise_kind("salt"), std::invalid_argument);
  }
}
