#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance binary. Each returns the number of mismatching coordinates and
// appends a description of each one to `log` when given.

#include <sstream>
#include <string>
#include <vector>

#include "alcn/loss.hpp"
#include "alcn/model.hpp"
#include "alcn/train.hpp"
#include "oracles.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-4;
inline constexpr double kRelTol = 1e-3;

inline void note(std::vector<std::string>* log, const std::string& what, double analytic, double fd) {
  if (!log) return;
  std::ostringstream s;
  s << what << " analytic " << analytic << " fd " << fd;
  log->push_back(s.str());
}

/// d/dparam and d/dinput of sum(r * net(input)) for a random r.
inline int network(const alcn::ArchSpec& arch, std::uint64_t seed, std::size_t coords_limit,
                   std::vector<std::string>* log = nullptr) {
  using namespace alcn;
  std::mt19937_64 rng(seed);
  ModelParams<double> p = init_params<double>(arch, seed);
  oracle::randomize_biases(p, rng);
  const Network net(arch);
  Shape in_shape = net.input_sample();
  in_shape.insert(in_shape.begin(), 2);
  Tensor<double> x = arch.kind == NetworkKind::kDenoiser ? oracle::random_tensor(in_shape, rng)
                                                         : oracle::random_tensor(in_shape, rng, -2.0, 2.0);
  Shape out_shape = net.output_sample();
  out_shape.insert(out_shape.begin(), 2);
  const Tensor<double> r = oracle::random_tensor(out_shape, rng, -1.0, 1.0);

  auto objective = [&]() {
    const Tensor<double> y = net.forward(p, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  ForwardTrace<double> trace;
  net.forward(p, x, &trace);
  ParamGrads<double> grads;
  const Tensor<double> gx = net.backward(p, trace, r, &grads, true);

  int bad = 0;
  for (auto [t, i] : oracle::sample_coords(p, coords_limit, rng)) {
    const double fd = oracle::central_diff(objective, {&p.tensors[t].value[i]}, kStep)[0];
    if (!oracle::rel_close(grads[t][i], fd, kRelTol)) {
      ++bad;
      note(log, p.tensors[t].name + "[" + std::to_string(i) + "]", grads[t][i], fd);
    }
  }
  for (std::size_t i = 0; i < x.size(); i += 3) {
    const double fd = oracle::central_diff(objective, {&x[i]}, kStep)[0];
    if (!oracle::rel_close(gx[i], fd, kRelTol)) {
      ++bad;
      note(log, "input[" + std::to_string(i) + "]", gx[i], fd);
    }
  }
  return bad;
}

/// l2, plain ffl and focal ffl gradients with respect to the reconstruction.
/// The focal weight is held at its unperturbed value, matching the detached
/// weight of the implementation.
inline int losses(std::uint64_t seed, std::vector<std::string>* log = nullptr) {
  using namespace alcn;
  std::mt19937_64 rng(seed);
  const auto x = oracle::random_tensor({2, 1, 6, 6}, rng);
  auto xr = oracle::random_tensor({2, 1, 6, 6}, rng);

  Tensor<double> g_l2, g_plain, g_focal;
  l2(x, xr, &g_l2);
  ffl(x, xr, false, &g_plain);
  ffl(x, xr, true, &g_focal);
  std::vector<double> weights;
  oracle::ffl(x, xr, true, nullptr, &weights);

  int bad = 0;
  for (std::size_t i = 0; i < xr.size(); ++i) {
    const std::string at = "[" + std::to_string(i) + "]";
    const double fd_l2 = oracle::central_diff([&] { return oracle::l2(x, xr); }, {&xr[i]}, kStep)[0];
    if (!oracle::rel_close(g_l2[i], fd_l2, kRelTol)) ++bad, note(log, "l2" + at, g_l2[i], fd_l2);
    const double fd_plain =
        oracle::central_diff([&] { return oracle::ffl(x, xr, false); }, {&xr[i]}, kStep)[0];
    if (!oracle::rel_close(g_plain[i], fd_plain, kRelTol)) ++bad, note(log, "ffl" + at, g_plain[i], fd_plain);
    const double fd_focal =
        oracle::central_diff([&] { return oracle::ffl(x, xr, true, &weights); }, {&xr[i]}, kStep)[0];
    if (!oracle::rel_close(g_focal[i], fd_focal, kRelTol))
      ++bad, note(log, "focal ffl" + at, g_focal[i], fd_focal);
  }
  return bad;
}

/// L(x, D(blend(x, G(z), alpha))) against central differences for sampled
/// parameters of both networks.
inline int composed(const alcn::ArchSpec& d_arch, const alcn::ArchSpec& g_arch, std::uint64_t seed,
                    const alcn::ReconLoss& loss, bool per_sample, std::vector<std::string>* log = nullptr) {
  using namespace alcn;
  std::mt19937_64 rng(seed);
  auto d = init_params<double>(d_arch, seed);
  auto g = init_params<double>(g_arch, seed + 100);
  oracle::randomize_biases(d, rng);
  oracle::randomize_biases(g, rng);
  const auto res = static_cast<std::size_t>(d_arch.resolution);
  const auto x = oracle::random_tensor({2, 1, res, res}, rng);
  const auto z =
      oracle::random_tensor({2, static_cast<std::size_t>(g_arch.noise_latent_dim)}, rng, -2.0, 2.0);
  std::uniform_real_distribution<double> ua(0.2, 0.9);
  std::vector<double> alphas{ua(rng)};
  if (per_sample) alphas.push_back(ua(rng));

  ParamGrads<double> dg, gg;
  alcn_recon_loss(d, g, x, z, alphas, loss, &dg, &gg);
  auto objective = [&] {
    return alcn_recon_loss(d, g, x, z, alphas, loss, static_cast<ParamGrads<double>*>(nullptr),
                           static_cast<ParamGrads<double>*>(nullptr));
  };
  int bad = 0;
  for (auto [t, i] : oracle::sample_coords(d, 60, rng)) {
    const double fd = oracle::central_diff(objective, {&d.tensors[t].value[i]}, kStep)[0];
    if (!oracle::rel_close(dg[t][i], fd, kRelTol))
      ++bad, note(log, "denoiser " + d.tensors[t].name + "[" + std::to_string(i) + "]", dg[t][i], fd);
  }
  for (auto [t, i] : oracle::sample_coords(g, 60, rng)) {
    const double fd = oracle::central_diff(objective, {&g.tensors[t].value[i]}, kStep)[0];
    if (!oracle::rel_close(gg[t][i], fd, kRelTol))
      ++bad, note(log, "noisegen " + g.tensors[t].name + "[" + std::to_string(i) + "]", gg[t][i], fd);
  }
  return bad;
}

}  // namespace gradcheck
