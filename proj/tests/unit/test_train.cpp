#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "alcn/train.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace alcn;
namespace fs = std::filesystem;

namespace {

Tensor<float> batch_for(const ArchSpec& arch, std::size_t b, Rng& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> x({b, static_cast<std::size_t>(arch.in_channels), static_cast<std::size_t>(arch.resolution),
                   static_cast<std::size_t>(arch.resolution)});
  for (auto& v : x.values()) v = u(rng);
  return x;
}

TrainConfig plain_config(LossKind kind) {
  TrainConfig cfg;
  cfg.loss.kind = kind;
  cfg.loss.focal = false;
  return cfg;
}

int composed_mismatches(const ArchSpec& d_arch, const ArchSpec& g_arch, std::uint64_t seed,
                        const ReconLoss& loss, bool per_sample) {
  std::vector<std::string> log;
  const int bad = gradcheck::composed(d_arch, g_arch, seed, loss, per_sample, &log);
  for (const auto& line : log) MESSAGE(line);
  return bad;
}

struct AdamOracle {
  std::vector<std::vector<double>> m, v;
  int t = 0;
};

/// Expected Adam parameter deltas computed in double from gradients g.
std::vector<std::vector<double>> adam_deltas(AdamOracle& o, const std::vector<std::vector<double>>& g,
                                             double lr, const OptimConfig& c) {
  if (o.m.empty()) {
    for (const auto& gi : g) {
      o.m.emplace_back(gi.size(), 0.0);
      o.v.emplace_back(gi.size(), 0.0);
    }
  }
  ++o.t;
  std::vector<std::vector<double>> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t k = 0; k < g[i].size(); ++k) {
      o.m[i][k] = c.beta1 * o.m[i][k] + (1 - c.beta1) * g[i][k];
      o.v[i][k] = c.beta2 * o.v[i][k] + (1 - c.beta2) * g[i][k] * g[i][k];
      const double mh = o.m[i][k] / (1 - std::pow(c.beta1, o.t));
      const double vh = o.v[i][k] / (1 - std::pow(c.beta2, o.t));
      out[i].push_back(-lr * mh / (std::sqrt(vh) + c.eps));
    }
  return out;
}

FitConfig small_fit(int epochs) {
  FitConfig fc;
  fc.channel_widths = {4, 8, 8};
  fc.latent_dim = 16;
  fc.noise_latent_dim = 16;
  fc.epochs = epochs;
  fc.batch_size = 16;
  fc.seed = 3;
  fc.log_every = 1;
  fc.validation_images = 32;
  fc.train.optim.lr_denoiser = 1e-3;
  return fc;
}

ProtocolSplit synth_split(int per_class = 40) {
  const auto set = synth_dataset(2, per_class, 28, 1);
  return build_protocol(set, Protocol::kOneVsRest, set.class_names[1], 0.8, 1);
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("adam update follows the textbook recursion") {
    ModelParams<float> p = init_params<float>(fixture::tiny_denoiser(), 1);
    p.tensors[1].trainable = false;
    AdamState opt = AdamState::zeros_like(p);
    OptimConfig cfg;
    const auto before = p;
    ParamGrads<float> g;
    for (const auto& t : p.tensors) g.emplace_back(t.value.shape(), 0.5f);
    adam_update(p, opt, g, 0.01, cfg);
    CHECK(opt.t == 1);
    CHECK(p.tensors[0].value[0] == doctest::Approx(before.tensors[0].value[0] - 0.01).epsilon(1e-5));
    CHECK(p.tensors[1].value == before.tensors[1].value);
    for (float m : opt.m[1].values()) CHECK(m == 0.0f);
    adam_update(p, opt, g, 0.0, cfg);
    CHECK(opt.t == 2);
    ParamGrads<float> wrong(1);
    CHECK_THROWS_AS(adam_update(p, opt, wrong, 0.01, cfg), std::invalid_argument);
  }

  TEST_CASE("gradient norm and clipping skip frozen tensors") {
    ModelParams<float> p = init_params<float>(fixture::tiny_denoiser(), 1);
    ParamGrads<float> g;
    for (const auto& t : p.tensors) g.emplace_back(t.value.shape(), 1.0f);
    std::size_t total = 0;
    for (const auto& t : p.tensors) total += t.value.size();
    CHECK(grad_norm(p, g) == doctest::Approx(std::sqrt(static_cast<double>(total))));
    p.tensors[0].trainable = false;
    CHECK(grad_norm(p, g) ==
          doctest::Approx(std::sqrt(static_cast<double>(total - p.tensors[0].value.size()))));
    clip_grad_norm(p, g, 1.0);
    CHECK(grad_norm(p, g) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("zero learning rates leave parameters bit-identical") {
    TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 4);
    const TrainState before = s;
    TrainConfig cfg;
    cfg.optim.lr_denoiser = 0.0;
    cfg.optim.lr_noisegen = 0.0;
    Rng rng(1);
    const auto x = batch_for(s.denoiser.arch, 3, rng);
    train_step(s, cfg, x, rng);
    CHECK(s.denoiser == before.denoiser);
    CHECK(s.noisegen == before.noisegen);
    CHECK(s.step == 1);

    cfg.strategy.kind = NoiseKind::kNone;
    train_baseline_step(s, cfg, x, rng);
    CHECK(s.denoiser == before.denoiser);
  }

  TEST_CASE("phase A delta equals Adam on the finite-difference gradient of -L") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      TrainState s = init_state(fixture::tiny_denoiser(), fixture::tiny_noisegen(), seed);
      TrainConfig cfg = plain_config(LossKind::kL2);
      cfg.optim.lr_noisegen = 1e-2;
      AdamOracle oracle_state;
      Rng rng(seed);
      for (int step = 0; step < 3; ++step) {
        const auto x = batch_for(s.denoiser.arch, 2, rng);
        const auto z = sample_latent(2, rng, static_cast<std::size_t>(s.noisegen.arch.noise_latent_dim));
        const std::vector<double> alphas{0.2 + 0.2 * step};

        const auto dd = s.denoiser.cast<double>();
        auto gd = s.noisegen.cast<double>();
        const auto xd = x.cast<double>(), zd = z.cast<double>();
        auto neg_loss = [&] {
          return -alcn_recon_loss(dd, gd, xd, zd, alphas, cfg.loss, static_cast<ParamGrads<double>*>(nullptr),
                                  static_cast<ParamGrads<double>*>(nullptr));
        };
        std::vector<std::vector<double>> fd_grads;
        for (auto& t : gd.tensors) {
          std::vector<double*> coords;
          for (auto& v : t.value.values()) coords.push_back(&v);
          fd_grads.push_back(oracle::central_diff(neg_loss, coords, 1e-4));
        }
        const auto expected = adam_deltas(oracle_state, fd_grads, cfg.optim.lr_noisegen, cfg.optim);

        const auto before = s.noisegen;
        const auto d_before = s.denoiser;
        StepStats stats;
        noisegen_phase(s, cfg, x, z, alphas, stats);
        CHECK(s.denoiser == d_before);
        for (std::size_t t = 0; t < before.tensors.size(); ++t)
          for (std::size_t k = 0; k < before.tensors[t].value.size(); ++k) {
            const double delta = static_cast<double>(s.noisegen.tensors[t].value[k]) - before.tensors[t].value[k];
            CHECK_MESSAGE(oracle::rel_close(delta, expected[t][k], 1e-3, 1e-4),
                          before.tensors[t].name << "[" << k << "] step " << step << ": " << delta
                                                 << " vs " << expected[t][k]);
          }
      }
    }
  }

  TEST_CASE("composed step losses match finite differences over 20 seeds") {
    int bad = 0;
    const ReconLoss l2_loss{LossKind::kL2, false}, plain_ffl{LossKind::kFfl, false};
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      bad += composed_mismatches(fixture::tiny_denoiser(), fixture::tiny_noisegen(), seed, l2_loss, false);
      bad += composed_mismatches(fixture::toy_denoiser(), fixture::toy_noisegen(), seed, plain_ffl, seed % 2 == 0);
      bad += composed_mismatches(fixture::toy_denoiser(), fixture::toy_noisegen(), seed, l2_loss, true);
    }
    CHECK(bad == 0);
  }

  TEST_CASE("baseline objective matches finite differences") {
    int bad = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      std::mt19937_64 rng(seed);
      auto d = init_params<double>(fixture::toy_denoiser(), seed);
      oracle::randomize_biases(d, rng);
      const auto x = oracle::random_tensor({2, 1, 4, 4}, rng);
      const auto x_in = oracle::random_tensor({2, 1, 4, 4}, rng);
      const ReconLoss loss{LossKind::kFfl, false};
      ParamGrads<double> g;
      denoiser_recon_loss(d, x_in, x, loss, &g);
      auto f = [&] { return denoiser_recon_loss(d, x_in, x, loss, static_cast<ParamGrads<double>*>(nullptr)); };
      for (auto [t, i] : oracle::sample_coords(d, 60, rng)) {
        const double fd = oracle::central_diff(f, {&d.tensors[t].value[i]}, 1e-4)[0];
        bad += !oracle::rel_close(g[t][i], fd, 1e-3);
      }
    }
    CHECK(bad == 0);
  }

  TEST_CASE("phase A ascends the reconstruction loss in most trials") {
    int ascended = 0;
    TrainConfig cfg;
    cfg.optim.lr_noisegen = 1e-4;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 1000 + trial);
      Rng rng(trial);
      const auto x = batch_for(s.denoiser.arch, 4, rng);
      const auto z = sample_latent(4, rng, static_cast<std::size_t>(s.noisegen.arch.noise_latent_dim));
      const auto alphas = sample_alphas(cfg.strategy.alpha, 4, rng);
      StepStats stats;
      const double before = noisegen_phase(s, cfg, x, z, alphas, stats);
      const double after = alcn_recon_loss(s.denoiser, s.noisegen, x, z, alphas, cfg.loss,
                                           static_cast<ParamGrads<float>*>(nullptr),
                                           static_cast<ParamGrads<float>*>(nullptr));
      ascended += after >= before;
    }
    MESSAGE("ascent in " << ascended << " of 100 trials");
    CHECK(ascended >= 80);
  }

  TEST_CASE("phases run in order and freeze the other network") {
    TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 8);
    s.denoiser.tensors[2].trainable = false;
    const auto frozen_before = s.denoiser.tensors[2].value;
    TrainConfig cfg;
    Rng rng(2);
    const auto x = batch_for(s.denoiser.arch, 3, rng);
    std::vector<StepEvent> events;
    ModelParams<float> d0, g0, g1;
    bool input_uses_updated_generator = false, denoiser_changed = false;
    train_step(s, cfg, x, rng, [&](StepEvent e, const TrainState& st, const StepContext& ctx) {
      events.push_back(e);
      switch (e) {
        case StepEvent::kSampled:
          d0 = st.denoiser;
          g0 = st.noisegen;
          break;
        case StepEvent::kNoisegenUpdated:
          CHECK(st.denoiser == d0);
          CHECK_FALSE(st.noisegen == g0);
          CHECK(ctx.trace->noise == forward_noise_generator(g0, *ctx.z));
          g1 = st.noisegen;
          break;
        case StepEvent::kDenoiserInput:
          input_uses_updated_generator = ctx.trace->noise == forward_noise_generator(g1, *ctx.z) &&
                                         ctx.trace->corrupted == blend(*ctx.x, ctx.trace->noise, ctx.alphas);
          break;
        case StepEvent::kDenoiserUpdated:
          CHECK(st.noisegen == g1);
          denoiser_changed = !(st.denoiser == d0);
          break;
      }
    });
    CHECK(events == std::vector<StepEvent>{StepEvent::kSampled, StepEvent::kNoisegenUpdated,
                                           StepEvent::kDenoiserInput, StepEvent::kDenoiserUpdated});
    CHECK(input_uses_updated_generator);
    CHECK(denoiser_changed);
    CHECK(s.denoiser.tensors[2].value == frozen_before);
    for (float m : s.denoiser_opt.m[2].values()) CHECK(m == 0.0f);
  }

  TEST_CASE("fixed seeds give identical step sequences") {
    TrainConfig cfg;
    auto run = [&] {
      TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 21);
      Rng data(5);
      std::vector<StepStats> out;
      for (int i = 0; i < 5; ++i) out.push_back(train_step(s, cfg, batch_for(s.denoiser.arch, 4, data), s.rng));
      return std::pair{out, s};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    for (const auto& st : a.first) {
      CHECK(std::isfinite(st.recon_loss_post));
      CHECK(st.alpha >= 0.2);
      CHECK(st.alpha <= 0.9);
    }
  }

  TEST_CASE("non-finite loss aborts with step and alpha") {
    TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 2);
    s.step = 41;
    TrainConfig cfg = plain_config(LossKind::kL2);
    Rng rng(1);
    auto x = batch_for(s.denoiser.arch, 2, rng);
    x[3] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step(s, cfg, x, rng);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("41") != std::string::npos);
      CHECK(msg.find("alpha") != std::string::npos);
    }
    cfg.strategy.kind = NoiseKind::kNone;
    CHECK_THROWS_AS(train_baseline_step(s, cfg, x, rng), TrainingError);
    cfg.strategy.kind = NoiseKind::kAlcn;
    CHECK_THROWS_AS(train_baseline_step(s, cfg, x, rng), std::invalid_argument);
    cfg.strategy.kind = NoiseKind::kGaussian;
    CHECK_THROWS_AS(train_step(s, cfg, x, rng), std::invalid_argument);
  }

  TEST_CASE("checkpoint round trip is bit-exact") {
    const auto dir = fixture::temp_dir("ckpt");
    TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 9, "hash-a");
    s.noisegen.tensors[1].trainable = false;
    TrainConfig cfg;
    Rng data(3);
    for (int i = 0; i < 3; ++i) train_step(s, cfg, batch_for(s.denoiser.arch, 2, data), s.rng);
    save_checkpoint(s, dir / "a.ckpt");
    TrainState r = load_checkpoint(dir / "a.ckpt", std::string("hash-a"));
    CHECK(r == s);
    CHECK(r.rng() == s.rng());
    CHECK(checkpoint_bytes(r) == checkpoint_bytes(s));
    CHECK(parse_checkpoint(checkpoint_bytes(init_state(fixture::tiny_denoiser(), fixture::tiny_noisegen(), 1))) ==
          init_state(fixture::tiny_denoiser(), fixture::tiny_noisegen(), 1));
  }

  TEST_CASE("damaged checkpoints are rejected with distinct codes") {
    const TrainState s = init_state(fixture::toy_denoiser(), fixture::toy_noisegen(), 9, "hash-a");
    const std::string good = checkpoint_bytes(s);
    auto code_of = [](const std::string& bytes) {
      try {
        parse_checkpoint(bytes);
      } catch (const CheckpointError& e) {
        return e.code();
      }
      return CheckpointErrorCode::kIo;
    };
    std::string flipped = good;
    flipped[good.size() / 2] ^= 0x01;
    CHECK(code_of(flipped) == CheckpointErrorCode::kChecksumMismatch);
    CHECK(code_of(good.substr(0, good.size() - 100)) == CheckpointErrorCode::kTruncated);
    CHECK(code_of(good.substr(0, 5)) == CheckpointErrorCode::kTruncated);
    std::string magic = good;
    magic[0] = 'X';
    CHECK(code_of(magic) == CheckpointErrorCode::kBadMagic);
    std::string version = good;
    version[8] = 2;
    CHECK(code_of(version) == CheckpointErrorCode::kVersionMismatch);
    CHECK(code_of(good + "xx") == CheckpointErrorCode::kMalformed);

    const auto dir = fixture::temp_dir("ckpt-bad");
    save_checkpoint(s, dir / "a.ckpt");
    try {
      load_checkpoint(dir / "a.ckpt", std::string("hash-b"));
      FAIL("expected a config mismatch");
    } catch (const CheckpointError& e) {
      CHECK(e.code() == CheckpointErrorCode::kConfigMismatch);
    }
    std::string warned;
    set_warning_sink([&](std::string_view m) { warned = m; });
    CHECK(load_checkpoint(dir / "a.ckpt", std::string("hash-b"), true) == s);
    set_warning_sink({});
    CHECK(warned.find("hash-b") != std::string::npos);
    try {
      load_checkpoint(dir / "missing.ckpt");
      FAIL("expected an io error");
    } catch (const CheckpointError& e) {
      CHECK(e.code() == CheckpointErrorCode::kIo);
    }
  }

  TEST_CASE("fit with zero epochs returns the initial state") {
    const auto ps = synth_split();
    auto fc = small_fit(0);
    const auto r = fit(fc, ps);
    CHECK(r.history.empty());
    CHECK(r.state == init_state(denoiser_arch(fc, 1, 28), noisegen_arch(fc, 1, 28), fc.seed));
  }

  TEST_CASE("fit writes run artifacts and a history of the expected length") {
    const auto ps = synth_split();
    const auto dir = fixture::temp_dir("fit-run");
    auto fc = small_fit(2);
    fc.log_every = 2;
    int checkpoints = 0;
    FitOptions opt;
    opt.run_dir = dir;
    opt.on_checkpoint = [&](const TrainState&, int, const fs::path& p) {
      ++checkpoints;
      CHECK(fs::exists(p));
    };
    const auto r = fit(fc, ps, opt);
    const std::size_t steps = (ps.train.size() + fc.batch_size - 1) / fc.batch_size;
    CHECK(r.history.size() == 2 * steps);
    CHECK(r.epochs.size() == 2);
    CHECK(checkpoints == 2);
    CHECK(fs::exists(dir / "checkpoints" / "epoch_0001.ckpt"));
    CHECK(fs::exists(dir / "checkpoints" / "final.ckpt"));
    CHECK(load_checkpoint(dir / "checkpoints" / "final.ckpt") == r.state);
    const auto metrics = alcn::split(read_file(dir / "metrics.csv"), '\n');
    CHECK(metrics[0] == kMetricsHeader);
    CHECK(metrics[1].rfind("2,", 0) == 0);
    CHECK(alcn::split(read_file(dir / "validation.csv"), '\n').size() >= 4);
  }

  TEST_CASE("fit is reproducible and baselines train too") {
    const auto ps = synth_split(20);
    auto fc = small_fit(1);
    const auto a = fit(fc, ps), b = fit(fc, ps);
    CHECK(a.history == b.history);
    CHECK(a.state == b.state);
    fc.train.strategy.kind = NoiseKind::kGaussian;
    const auto g = fit(fc, ps);
    CHECK(g.state.noisegen_opt.t == 0);
    CHECK(g.history.size() == a.history.size());
  }

  TEST_CASE("checkpoint write failure flushes metrics and raises") {
    const auto ps = synth_split(20);
    const auto dir = fixture::temp_dir("fit-fail");
    fs::create_directories(dir / "checkpoints" / "final.ckpt" / "blocker");
    auto fc = small_fit(1);
    FitOptions opt;
    opt.run_dir = dir;
    CHECK_THROWS_AS(fit(fc, ps, opt), TrainingError);
    const auto rows = alcn::split(read_file(dir / "metrics.csv"), '\n');
    CHECK(rows.size() >= 3);
  }

  TEST_CASE("200 steps on synthetic shapes halve the clean reconstruction loss") {
    const auto ps = synth_split(64);
    auto fc = small_fit(1);
    const std::size_t steps_per_epoch = (ps.train.size() + fc.batch_size - 1) / fc.batch_size;
    fc.epochs = static_cast<int>((200 + steps_per_epoch - 1) / steps_per_epoch);
    fc.checkpoint_every = 0;
    const auto r = fit(fc, ps);
    CHECK(r.history.size() >= 200);
    const double final_l2 = r.epochs.back().validation_l2;
    MESSAGE("validation l2 " << r.initial_validation_l2 << " -> " << final_l2);
    CHECK(final_l2 * 2.0 <= r.initial_validation_l2);
  }
}
