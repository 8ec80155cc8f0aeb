#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "alcn/corruption.hpp"
#include "alcn/data.hpp"
#include "alcn/loss.hpp"
#include "alcn/model.hpp"
#include "alcn/util.hpp"

namespace alcn {

/// Adam settings. A learning rate of 0 turns the corresponding update off.
struct OptimConfig {
  double lr_denoiser = 1e-5;
  double lr_noisegen = 8e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global-norm gradient clip per network; 0 disables clipping.
  double clip_norm = 0.0;

  void validate() const;
  friend bool operator==(const OptimConfig&, const OptimConfig&) = default;
};

/// First and second moments, index-aligned with ModelParams::tensors.
struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t t = 0;  // updates applied so far

  static AdamState zeros_like(const ModelParams<float>& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam update on the trainable tensors of `params`. Frozen tensors and
/// their moments are left untouched.
void adam_update(ModelParams<float>& params, AdamState& opt, const ParamGrads<float>& grads,
                 double lr, const OptimConfig& cfg);

/// sqrt of the summed squares of the gradients of trainable tensors.
double grad_norm(const ModelParams<float>& params, const ParamGrads<float>& grads);

/// Scales grads in place so their global norm is at most max_norm.
void clip_grad_norm(const ModelParams<float>& params, ParamGrads<float>& grads, double max_norm);

struct TrainState {
  ModelParams<float> denoiser;
  ModelParams<float> noisegen;
  AdamState denoiser_opt;
  AdamState noisegen_opt;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  Rng rng;
  std::string config_hash;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Fresh parameters (denoiser from `seed`, noise generator from seed + 1) and
/// an rng seeded with seed + 2.
TrainState init_state(const ArchSpec& denoiser, const ArchSpec& noisegen, std::uint64_t seed,
                      std::string config_hash = {});

struct TrainConfig {
  OptimConfig optim;
  ReconLoss loss;
  LossWeights weights;
  /// kAlcn runs the adversarial step; anything else the fixed-corruption baseline.
  NoiseStrategy strategy;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct StepStats {
  std::uint64_t step = 0;  // step counter after the update
  double recon_loss_pre_noise_update = 0.0;
  double recon_loss_post = 0.0;
  double alpha = 0.0;  // mean alpha when sampled per image
  double grad_norm_denoiser = 0.0;
  double grad_norm_noisegen = 0.0;

  friend bool operator==(const StepStats&, const StepStats&) = default;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensors produced inside one adversarial evaluation.
template <typename T>
struct AlcnTrace {
  Tensor<T> noise;
  Tensor<T> corrupted;
  Tensor<T> output;
};

/// L(x, D(blend(x, G(z), alpha))) with gradients of L itself (not of the
/// weighted objectives) written to d_grads / g_grads when non-null.
template <typename T>
double alcn_recon_loss(const ModelParams<T>& denoiser, const ModelParams<T>& noisegen,
                       const Tensor<T>& x, const Tensor<T>& z, std::span<const double> alphas,
                       const ReconLoss& loss, ParamGrads<T>* d_grads, ParamGrads<T>* g_grads,
                       AlcnTrace<T>* trace = nullptr);

/// L(x, D(x_in)) and its denoiser gradient; the baseline objective.
template <typename T>
double denoiser_recon_loss(const ModelParams<T>& denoiser, const Tensor<T>& x_in,
                           const Tensor<T>& x, const ReconLoss& loss, ParamGrads<T>* d_grads,
                           Tensor<T>* output = nullptr);

/// Points inside train_step where a hook is called.
enum class StepEvent {
  kSampled,           // alpha and z drawn, nothing updated
  kNoisegenUpdated,   // end of phase A
  kDenoiserInput,     // phase B corrupted batch built from the updated generator
  kDenoiserUpdated,   // end of phase B, before the step counter moves
};

struct StepContext {
  const Tensor<float>* x = nullptr;
  const Tensor<float>* z = nullptr;
  std::span<const double> alphas;
  const AlcnTrace<float>* trace = nullptr;  // the phase the event belongs to
};

using StepHook = std::function<void(StepEvent, const TrainState&, const StepContext&)>;

/// Phase A only: ascend L for the noise generator with the denoiser frozen.
/// Returns L before the update and fills the noisegen gradient norm.
double noisegen_phase(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                      const Tensor<float>& z, std::span<const double> alphas, StepStats& stats,
                      AlcnTrace<float>* trace = nullptr);

/// Phase B only: descend L for the denoiser with the generator frozen.
double denoiser_phase(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                      const Tensor<float>& z, std::span<const double> alphas, StepStats& stats,
                      AlcnTrace<float>* trace = nullptr);

/// Draws per-step (or per-image) alphas.
std::vector<double> sample_alphas(const AlphaPolicy& policy, std::size_t batch, Rng& rng);

/// One adversarial step: sample alpha and z, phase A, phase B (same alpha and
/// z, regenerated noise), then step + 1. Throws TrainingError on a non-finite
/// loss.
StepStats train_step(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x, Rng& rng,
                     const StepHook& hook = {});

/// One denoiser update on L(x, D(apply_strategy(strategy, x))).
StepStats train_baseline_step(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                              Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints

enum class CheckpointErrorCode {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kChecksumMismatch,
  kMalformed,
  kConfigMismatch,
};
std::string to_string(CheckpointErrorCode code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const TrainState& state);
TrainState parse_checkpoint(std::string_view bytes, std::string_view source = "<checkpoint>");

/// Atomic write of checkpoint_bytes(state).
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// When expected_config_hash is set and differs from the stored hash, loading
/// fails with kConfigMismatch unless allow_config_mismatch, in which case a
/// warning is emitted.
TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_config_hash = std::nullopt,
                           bool allow_config_mismatch = false);

// ---------------------------------------------------------------------------
// Fit

struct FitConfig {
  TrainConfig train;
  std::vector<int> channel_widths{32, 64, 128};
  int latent_dim = 128;
  int noise_latent_dim = 256;
  int epochs = 50;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  int log_every = 10;
  /// Checkpoint every this many epochs; the final epoch is always saved.
  int checkpoint_every = 1;
  /// Normal test images used for the per-epoch validation loss.
  std::size_t validation_images = 256;
  std::string config_hash;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::uint64_t step = 0;
  double train_loss = 0.0;       // mean recon_loss_post over the epoch
  double validation_l2 = 0.0;    // mean L2 of clean normal images vs D(x)
};

struct FitResult {
  TrainState state;
  std::vector<StepStats> history;
  std::vector<EpochRecord> epochs;
  double initial_validation_l2 = 0.0;
};

struct FitOptions {
  /// When set: metrics.csv, timing.csv, validation.csv and checkpoints/ go here.
  std::filesystem::path run_dir;
  std::function<void(const TrainState&, const StepStats&)> on_step;
  /// Called after each checkpoint is written, with its path.
  std::function<void(const TrainState&, int epoch, const std::filesystem::path&)> on_checkpoint;
};

ArchSpec denoiser_arch(const FitConfig& cfg, int channels, int resolution);
ArchSpec noisegen_arch(const FitConfig& cfg, int channels, int resolution);

/// Mean L2 between clean images and their reconstructions.
double validation_l2(const ModelParams<float>& denoiser, const Tensor<float>& images,
                     std::size_t batch_size = 128);

inline constexpr const char* kMetricsHeader =
    "step,recon_loss,alpha,grad_norm_denoiser,grad_norm_noisegen";

FitResult fit(const FitConfig& cfg, const ProtocolSplit& split, const FitOptions& options = {});

}  // namespace alcn
