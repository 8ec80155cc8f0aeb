#include "alcn/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace alcn {
namespace fs = std::filesystem;

void OptimConfig::validate() const {
  if (!(lr_denoiser >= 0.0 && lr_noisegen >= 0.0))
    throw std::invalid_argument("learning rates must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("adam eps must be > 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
}

AdamState AdamState::zeros_like(const ModelParams<float>& params) {
  AdamState s;
  for (const auto& t : params.tensors) {
    s.m.emplace_back(t.value.shape());
    s.v.emplace_back(t.value.shape());
  }
  return s;
}

void adam_update(ModelParams<float>& params, AdamState& opt, const ParamGrads<float>& grads,
                 double lr, const OptimConfig& cfg) {
  if (grads.size() != params.tensors.size() || opt.m.size() != params.tensors.size())
    throw std::invalid_argument("adam_update: gradient or moment count mismatch");
  opt.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    if (!p.trainable) continue;
    require_same_shape(p.value, grads[i], "adam_update");
    float* w = p.value.data();
    float* m = opt.m[i].data();
    float* v = opt.v[i].data();
    const float* g = grads[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      const double mh = m[k] / c1;
      const double vh = v[k] / c2;
      w[k] -= static_cast<float>(lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

double grad_norm(const ModelParams<float>& params, const ParamGrads<float>& grads) {
  double acc = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!params.tensors[i].trainable) continue;
    for (float g : grads[i].values()) acc += static_cast<double>(g) * g;
  }
  return std::sqrt(acc);
}

void clip_grad_norm(const ModelParams<float>& params, ParamGrads<float>& grads, double max_norm) {
  const double norm = grad_norm(params, grads);
  if (max_norm <= 0.0 || norm <= max_norm) return;
  const float s = static_cast<float>(max_norm / norm);
  for (auto& g : grads)
    for (auto& v : g.values()) v *= s;
}

TrainState init_state(const ArchSpec& denoiser, const ArchSpec& noisegen, std::uint64_t seed,
                      std::string config_hash) {
  TrainState s;
  s.denoiser = init_params<float>(denoiser, seed);
  s.noisegen = init_params<float>(noisegen, seed + 1);
  s.denoiser_opt = AdamState::zeros_like(s.denoiser);
  s.noisegen_opt = AdamState::zeros_like(s.noisegen);
  s.seed = seed;
  s.rng.seed(seed + 2);
  s.config_hash = std::move(config_hash);
  return s;
}

void TrainConfig::validate() const {
  optim.validate();
  weights.validate();
  strategy.validate();
}

// ---------------------------------------------------------------------------
// Objectives

template <typename T>
double alcn_recon_loss(const ModelParams<T>& denoiser, const ModelParams<T>& noisegen,
                       const Tensor<T>& x, const Tensor<T>& z, std::span<const double> alphas,
                       const ReconLoss& loss, ParamGrads<T>* d_grads, ParamGrads<T>* g_grads,
                       AlcnTrace<T>* trace) {
  const Network dnet(denoiser.arch), gnet(noisegen.arch);
  ForwardTrace<T> gtrace, dtrace;
  Tensor<T> n = gnet.forward(noisegen, z, &gtrace);
  if (n.shape() != x.shape())
    throw std::invalid_argument("noise generator output " + to_string(n.shape()) +
                                " does not match batch " + to_string(x.shape()));
  Tensor<T> xt = blend(x, n, alphas);
  Tensor<T> xr = dnet.forward(denoiser, xt, &dtrace);
  Tensor<T> gxr;
  const double value = loss(x, xr, (d_grads || g_grads) ? &gxr : nullptr);

  if (d_grads || g_grads) {
    Tensor<T> gxt = dnet.backward(denoiser, dtrace, std::move(gxr), d_grads, g_grads != nullptr);
    if (g_grads) {
      // d blend / d n = 1 - alpha for each image.
      const std::size_t per = sample_size(gxt);
      for (std::size_t b = 0; b < gxt.dim(0); ++b) {
        const T s = static_cast<T>(1.0 - (alphas.size() == 1 ? alphas[0] : alphas[b]));
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) gxt[i] *= s;
      }
      gnet.backward(noisegen, gtrace, std::move(gxt), g_grads, false);
    }
  }
  if (trace) {
    trace->noise = std::move(n);
    trace->corrupted = std::move(xt);
    trace->output = std::move(xr);
  }
  return value;
}

template <typename T>
double denoiser_recon_loss(const ModelParams<T>& denoiser, const Tensor<T>& x_in,
                           const Tensor<T>& x, const ReconLoss& loss, ParamGrads<T>* d_grads,
                           Tensor<T>* output) {
  const Network dnet(denoiser.arch);
  ForwardTrace<T> dtrace;
  Tensor<T> xr = dnet.forward(denoiser, x_in, &dtrace);
  Tensor<T> gxr;
  const double value = loss(x, xr, d_grads ? &gxr : nullptr);
  if (d_grads) dnet.backward(denoiser, dtrace, std::move(gxr), d_grads, false);
  if (output) *output = std::move(xr);
  return value;
}

#define ALCN_INSTANTIATE(T)                                                                    \
  template double alcn_recon_loss<T>(const ModelParams<T>&, const ModelParams<T>&,             \
                                     const Tensor<T>&, const Tensor<T>&,                       \
                                     std::span<const double>, const ReconLoss&,                \
                                     ParamGrads<T>*, ParamGrads<T>*, AlcnTrace<T>*);           \
  template double denoiser_recon_loss<T>(const ModelParams<T>&, const Tensor<T>&,              \
                                         const Tensor<T>&, const ReconLoss&, ParamGrads<T>*,   \
                                         Tensor<T>*);
ALCN_INSTANTIATE(float)
ALCN_INSTANTIATE(double)
#undef ALCN_INSTANTIATE

// ---------------------------------------------------------------------------
// Steps

namespace {

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void require_finite(double loss, const TrainState& state, std::span<const double> alphas,
                    const char* phase) {
  if (std::isfinite(loss)) return;
  throw TrainingError("non-finite reconstruction loss in " + std::string(phase) + " at step " +
                      std::to_string(state.step) + " (alpha=" + format_double(mean(alphas)) +
                      ")");
}

void scale(ParamGrads<float>& grads, double s) {
  const float f = static_cast<float>(s);
  for (auto& g : grads)
    for (auto& v : g.values()) v *= f;
}

}  // namespace

std::vector<double> sample_alphas(const AlphaPolicy& policy, std::size_t batch, Rng& rng) {
  const std::size_t n = policy.per_sample ? batch : 1;
  std::vector<double> out(n);
  for (auto& a : out) a = sample_alpha(policy, rng);
  return out;
}

double noisegen_phase(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                      const Tensor<float>& z, std::span<const double> alphas, StepStats& stats,
                      AlcnTrace<float>* trace) {
  ParamGrads<float> grads;
  const double L =
      alcn_recon_loss(state.denoiser, state.noisegen, x, z, alphas, cfg.loss, static_cast<ParamGrads<float>*>(nullptr), &grads, trace);
  require_finite(L, state, alphas, "noise generator phase");
  // The generator minimises -lambda1 * L.
  scale(grads, minimax_objective(1.0, cfg.weights).noisegen);
  stats.grad_norm_noisegen = grad_norm(state.noisegen, grads);
  clip_grad_norm(state.noisegen, grads, cfg.optim.clip_norm);
  adam_update(state.noisegen, state.noisegen_opt, grads, cfg.optim.lr_noisegen, cfg.optim);
  return L;
}

double denoiser_phase(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                      const Tensor<float>& z, std::span<const double> alphas, StepStats& stats,
                      AlcnTrace<float>* trace) {
  ParamGrads<float> grads;
  const double L =
      alcn_recon_loss(state.denoiser, state.noisegen, x, z, alphas, cfg.loss, &grads, static_cast<ParamGrads<float>*>(nullptr), trace);
  require_finite(L, state, alphas, "denoiser phase");
  scale(grads, minimax_objective(1.0, cfg.weights).denoiser);
  stats.grad_norm_denoiser = grad_norm(state.denoiser, grads);
  clip_grad_norm(state.denoiser, grads, cfg.optim.clip_norm);
  adam_update(state.denoiser, state.denoiser_opt, grads, cfg.optim.lr_denoiser, cfg.optim);
  return L;
}

StepStats train_step(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x, Rng& rng,
                     const StepHook& hook) {
  if (cfg.strategy.kind != NoiseKind::kAlcn)
    throw std::invalid_argument("train_step runs the alcn strategy; use train_baseline_step for " +
                                to_string(cfg.strategy.kind));
  if (x.rank() != 4 || x.dim(0) == 0) throw std::invalid_argument("train_step: empty batch");
  const std::size_t batch = x.dim(0);

  const std::vector<double> alphas = sample_alphas(cfg.strategy.alpha, batch, rng);
  const Tensor<float> z =
      sample_latent(batch, rng, static_cast<std::size_t>(state.noisegen.arch.noise_latent_dim));
  StepStats stats;
  stats.alpha = mean(alphas);
  StepContext ctx{&x, &z, alphas, nullptr};
  if (hook) hook(StepEvent::kSampled, state, ctx);

  AlcnTrace<float> trace_a;
  stats.recon_loss_pre_noise_update = noisegen_phase(state, cfg, x, z, alphas, stats, &trace_a);
  ctx.trace = &trace_a;
  if (hook) hook(StepEvent::kNoisegenUpdated, state, ctx);

  AlcnTrace<float> trace_b;
  stats.recon_loss_post = denoiser_phase(state, cfg, x, z, alphas, stats, &trace_b);
  ctx.trace = &trace_b;
  if (hook) {
    hook(StepEvent::kDenoiserInput, state, ctx);
    hook(StepEvent::kDenoiserUpdated, state, ctx);
  }
  state.step += 1;
  stats.step = state.step;
  return stats;
}

StepStats train_baseline_step(TrainState& state, const TrainConfig& cfg, const Tensor<float>& x,
                              Rng& rng) {
  if (cfg.strategy.kind == NoiseKind::kAlcn)
    throw std::invalid_argument("train_baseline_step: strategy alcn needs train_step");
  if (x.rank() != 4 || x.dim(0) == 0)
    throw std::invalid_argument("train_baseline_step: empty batch");
  const Tensor<float> x_in = apply_strategy(cfg.strategy, x, rng);
  ParamGrads<float> grads;
  const double L = denoiser_recon_loss(state.denoiser, x_in, x, cfg.loss, &grads);
  require_finite(L, state, {}, "baseline step");
  scale(grads, cfg.weights.lambda0);
  StepStats stats;
  stats.recon_loss_pre_noise_update = L;
  stats.recon_loss_post = L;
  stats.grad_norm_denoiser = grad_norm(state.denoiser, grads);
  clip_grad_norm(state.denoiser, grads, cfg.optim.clip_norm);
  adam_update(state.denoiser, state.denoiser_opt, grads, cfg.optim.lr_denoiser, cfg.optim);
  state.step += 1;
  stats.step = state.step;
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as little-endian host floats");

std::string to_string(CheckpointErrorCode code) {
  switch (code) {
    case CheckpointErrorCode::kIo: return "io";
    case CheckpointErrorCode::kBadMagic: return "bad_magic";
    case CheckpointErrorCode::kVersionMismatch: return "version_mismatch";
    case CheckpointErrorCode::kTruncated: return "truncated";
    case CheckpointErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case CheckpointErrorCode::kMalformed: return "malformed";
    case CheckpointErrorCode::kConfigMismatch: return "config_mismatch";
  }
  return "?";
}

namespace {

constexpr std::string_view kMagic = "ALCNCKPT";
constexpr std::size_t kDigestLen = 64;  // hex SHA-256
constexpr std::size_t kFixedHeader = 8 + 4 + 8;
constexpr std::uint8_t kDtypeF32 = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_str(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view source) : b_(bytes), source_(source) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_str() { return std::string(take(get<std::uint32_t>())); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size())
      throw CheckpointError(CheckpointErrorCode::kMalformed,
                            std::string(source_) + ": record runs past the end of the payload");
  }
  std::string_view b_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

KeyValues arch_kv(const std::string& prefix, const ArchSpec& a) {
  std::vector<std::string> widths;
  for (int w : a.channel_widths) widths.push_back(std::to_string(w));
  return {{prefix + ".kind", to_string(a.kind)},
          {prefix + ".in_channels", std::to_string(a.in_channels)},
          {prefix + ".resolution", std::to_string(a.resolution)},
          {prefix + ".latent_dim", std::to_string(a.latent_dim)},
          {prefix + ".noise_latent_dim", std::to_string(a.noise_latent_dim)},
          {prefix + ".channel_widths", join(widths, ',')},
          {prefix + ".leaky_slope", format_double(a.leaky_slope)}};
}

ArchSpec arch_from_kv(const std::string& prefix, const KeyValues& kv) {
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(prefix + "." + k);
    if (it == kv.end())
      throw CheckpointError(CheckpointErrorCode::kMalformed,
                            "checkpoint metadata lacks " + prefix + "." + k);
    return it->second;
  };
  ArchSpec a;
  a.kind = parse_network_kind(need("kind"));
  a.in_channels = static_cast<int>(parse_int(need("in_channels"), "in_channels"));
  a.resolution = static_cast<int>(parse_int(need("resolution"), "resolution"));
  a.latent_dim = static_cast<int>(parse_int(need("latent_dim"), "latent_dim"));
  a.noise_latent_dim = static_cast<int>(parse_int(need("noise_latent_dim"), "noise_latent_dim"));
  a.channel_widths.clear();
  for (const auto& w : split(need("channel_widths"), ','))
    a.channel_widths.push_back(static_cast<int>(parse_int(w, "channel_widths")));
  a.leaky_slope = parse_double(need("leaky_slope"), "leaky_slope");
  a.validate();
  return a;
}

void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t, bool trainable) {
  put_str(out, name);
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint8_t>(out, trainable ? 1 : 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
}

struct Record {
  Tensor<float> value;
  bool trainable = true;
};

void put_network(std::string& out, const std::string& prefix, const ModelParams<float>& p,
                 const AdamState& opt) {
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const auto& t = p.tensors[i];
    put_tensor(out, prefix + "/" + t.name, t.value, t.trainable);
    put_tensor(out, prefix + ".adam_m/" + t.name, opt.m[i], true);
    put_tensor(out, prefix + ".adam_v/" + t.name, opt.v[i], true);
  }
}

void take_network(std::map<std::string, Record>& records, const std::string& prefix,
                  const ArchSpec& arch, ModelParams<float>& p, AdamState& opt) {
  p.arch = arch;
  p.tensors.clear();
  opt.m.clear();
  opt.v.clear();
  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = records.find(name);
    if (it == records.end())
      throw CheckpointError(CheckpointErrorCode::kMalformed, "checkpoint lacks tensor " + name);
    if (it->second.value.shape() != shape)
      throw CheckpointError(CheckpointErrorCode::kMalformed,
                            "tensor " + name + " has shape " + to_string(it->second.value.shape()) +
                                ", architecture expects " + to_string(shape));
    Record r = std::move(it->second);
    records.erase(it);
    return r;
  };
  const Network net(arch);
  for (const auto& [name, shape] : net.parameter_layout()) {
    Record w = take(prefix + "/" + name, shape);
    p.tensors.push_back({name, std::move(w.value), w.trainable});
    opt.m.push_back(take(prefix + ".adam_m/" + name, shape).value);
    opt.v.push_back(take(prefix + ".adam_v/" + name, shape).value);
  }
}

}  // namespace

std::string checkpoint_bytes(const TrainState& s) {
  KeyValues meta = arch_kv("denoiser", s.denoiser.arch);
  meta.merge(arch_kv("noisegen", s.noisegen.arch));
  std::ostringstream rng;
  rng << s.rng;
  meta["rng_state"] = rng.str();
  meta["step"] = std::to_string(s.step);
  meta["seed"] = std::to_string(s.seed);
  meta["denoiser.adam_t"] = std::to_string(s.denoiser_opt.t);
  meta["noisegen.adam_t"] = std::to_string(s.noisegen_opt.t);

  std::string body;
  put_str(body, s.config_hash);
  put_str(body, format_key_values(meta));
  put<std::uint32_t>(body, static_cast<std::uint32_t>(3 * (s.denoiser.tensors.size() +
                                                           s.noisegen.tensors.size())));
  put_network(body, "denoiser", s.denoiser, s.denoiser_opt);
  put_network(body, "noisegen", s.noisegen, s.noisegen_opt);

  std::string out(kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, kFixedHeader + body.size() + kDigestLen);
  out += body;
  out += sha256_hex(out);
  return out;
}

TrainState parse_checkpoint(std::string_view bytes, std::string_view source) {
  const std::string src(source);
  const std::size_t m = std::min(bytes.size(), kMagic.size());
  if (bytes.substr(0, m) != kMagic.substr(0, m))
    throw CheckpointError(CheckpointErrorCode::kBadMagic, src + ": not an ALCN checkpoint");
  if (bytes.size() < kFixedHeader + kDigestLen)
    throw CheckpointError(CheckpointErrorCode::kTruncated,
                          src + ": truncated (" + std::to_string(bytes.size()) + " bytes)");
  Reader head(bytes.substr(kMagic.size()), source);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointErrorCode::kVersionMismatch,
                          src + ": checkpoint format version " + std::to_string(version) +
                              ", this build reads version " + std::to_string(kCheckpointVersion));
  const auto declared = head.get<std::uint64_t>();
  if (bytes.size() < declared)
    throw CheckpointError(CheckpointErrorCode::kTruncated,
                          src + ": truncated, " + std::to_string(bytes.size()) + " of " +
                              std::to_string(declared) + " bytes present");
  if (bytes.size() > declared)
    throw CheckpointError(CheckpointErrorCode::kMalformed,
                          src + ": " + std::to_string(bytes.size() - declared) +
                              " unexpected trailing bytes");
  const std::string_view covered = bytes.substr(0, bytes.size() - kDigestLen);
  if (sha256_hex(covered) != bytes.substr(bytes.size() - kDigestLen))
    throw CheckpointError(CheckpointErrorCode::kChecksumMismatch,
                          src + ": checksum mismatch, file is corrupt");

  Reader r(covered.substr(kFixedHeader), source);
  TrainState s;
  s.config_hash = r.get_str();
  KeyValues meta;
  try {
    meta = parse_key_values(r.get_str(), source);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointErrorCode::kMalformed, e.what());
  }
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_str();
    if (r.get<std::uint8_t>() != kDtypeF32)
      throw CheckpointError(CheckpointErrorCode::kMalformed, src + ": tensor " + name +
                                                                 " has an unknown dtype tag");
    const bool trainable = r.get<std::uint8_t>() != 0;
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    Tensor<float> t(shape);
    const auto payload = r.take(t.size() * sizeof(float));
    std::memcpy(t.data(), payload.data(), payload.size());
    records[name] = {std::move(t), trainable};
  }

  try {
    const ArchSpec da = arch_from_kv("denoiser", meta), ga = arch_from_kv("noisegen", meta);
    take_network(records, "denoiser", da, s.denoiser, s.denoiser_opt);
    take_network(records, "noisegen", ga, s.noisegen, s.noisegen_opt);
    s.step = parse_uint(meta.at("step"), "step");
    s.seed = parse_uint(meta.at("seed"), "seed");
    s.denoiser_opt.t = parse_uint(meta.at("denoiser.adam_t"), "denoiser.adam_t");
    s.noisegen_opt.t = parse_uint(meta.at("noisegen.adam_t"), "noisegen.adam_t");
    std::istringstream rng(meta.at("rng_state"));
    rng >> s.rng;
    if (!rng) throw std::invalid_argument("unreadable rng_state");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kMalformed,
                          src + ": bad metadata: " + std::string(e.what()));
  }
  if (!records.empty())
    throw CheckpointError(CheckpointErrorCode::kMalformed,
                          src + ": unexpected tensor " + records.begin()->first);
  return s;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  write_file_atomic(path, checkpoint_bytes(state));
}

TrainState load_checkpoint(const fs::path& path, const std::optional<std::string>& expected,
                           bool allow_config_mismatch) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorCode::kIo, e.what());
  }
  TrainState s = parse_checkpoint(bytes, path.string());
  if (expected && *expected != s.config_hash) {
    const std::string msg = path.string() + ": checkpoint config hash " + s.config_hash +
                            " differs from expected " + *expected;
    if (!allow_config_mismatch)
      throw CheckpointError(CheckpointErrorCode::kConfigMismatch,
                            msg + " (pass the override flag to load anyway)");
    warn(msg);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fit

void FitConfig::validate() const {
  train.validate();
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (channel_widths.empty()) throw std::invalid_argument("channel_widths must not be empty");
}

ArchSpec denoiser_arch(const FitConfig& cfg, int channels, int resolution) {
  auto a = ArchSpec::denoiser(channels, resolution, cfg.channel_widths, cfg.latent_dim);
  a.noise_latent_dim = cfg.noise_latent_dim;
  return a;
}

ArchSpec noisegen_arch(const FitConfig& cfg, int channels, int resolution) {
  auto a = ArchSpec::noise_generator(channels, resolution, cfg.channel_widths,
                                     cfg.noise_latent_dim);
  a.latent_dim = cfg.latent_dim;
  return a;
}

double validation_l2(const ModelParams<float>& denoiser, const Tensor<float>& images,
                     std::size_t batch_size) {
  if (images.empty()) return 0.0;
  const std::size_t n = images.dim(0);
  double acc = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    const Tensor<float> x = gather(images, idx);
    for (double v : l2_per_sample(x, forward_denoiser(denoiser, x))) acc += v;
  }
  return acc / static_cast<double>(n);
}

namespace {

std::string metrics_row(const StepStats& s) {
  return std::to_string(s.step) + "," + format_double(s.recon_loss_post) + "," +
         format_double(s.alpha) + "," + format_double(s.grad_norm_denoiser) + "," +
         format_double(s.grad_norm_noisegen) + "\n";
}

std::ofstream open_csv(const fs::path& path, const char* header) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << header << "\n";
  return f;
}

}  // namespace

FitResult fit(const FitConfig& cfg, const ProtocolSplit& split, const FitOptions& options) {
  cfg.validate();
  const LabeledImageSet& train = split.train;
  if (train.size() == 0) throw std::invalid_argument("fit: empty training set");
  const int channels = static_cast<int>(train.channels());
  const int resolution = static_cast<int>(train.resolution());

  FitResult result;
  result.state = init_state(denoiser_arch(cfg, channels, resolution),
                            noisegen_arch(cfg, channels, resolution), cfg.seed, cfg.config_hash);
  TrainState& state = result.state;
  const bool alcn = cfg.train.strategy.kind == NoiseKind::kAlcn;

  std::vector<std::size_t> val_idx;
  for (std::size_t i = 0; i < split.test.size() && val_idx.size() < cfg.validation_images; ++i)
    if (!split.test_anomaly_flags[i]) val_idx.push_back(i);
  const Tensor<float> val_images = gather(split.test.images, val_idx);
  result.initial_validation_l2 = validation_l2(state.denoiser, val_images);

  const bool persist = !options.run_dir.empty();
  std::ofstream metrics, timing, validation;
  if (persist) {
    fs::create_directories(options.run_dir / "checkpoints");
    metrics = open_csv(options.run_dir / "metrics.csv", kMetricsHeader);
    timing = open_csv(options.run_dir / "timing.csv", "step,wall_ms");
    validation = open_csv(options.run_dir / "validation.csv", "epoch,step,train_loss,validation_l2");
    validation << "0,0,," << format_double(result.initial_validation_l2) << "\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto checkpoint = [&](int epoch, const std::string& file) {
    if (!persist) return;
    const fs::path path = options.run_dir / "checkpoints" / file;
    try {
      save_checkpoint(state, path);
    } catch (const std::exception& e) {
      metrics.flush();
      timing.flush();
      validation.flush();
      throw TrainingError("checkpoint write failed after step " + std::to_string(state.step) +
                          " (metrics up to that step were flushed): " + e.what());
    }
    if (options.on_checkpoint) options.on_checkpoint(state, epoch, path);
  };

  const std::uint64_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchPlan plan{cfg.batch_size, true, cfg.seed * 1000003u + static_cast<std::uint64_t>(epoch),
                   false};
    double epoch_loss = 0.0;
    const auto batches = batch_indices(train.size(), plan);
    for (const auto& idx : batches) {
      const Tensor<float> x = gather(train.images, idx);
      const StepStats stats = alcn ? train_step(state, cfg.train, x, state.rng)
                                   : train_baseline_step(state, cfg.train, x, state.rng);
      result.history.push_back(stats);
      epoch_loss += stats.recon_loss_post;
      if (persist && (stats.step % static_cast<std::uint64_t>(cfg.log_every) == 0 ||
                      stats.step == total_steps)) {
        metrics << metrics_row(stats) << std::flush;
        const auto ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0).count();
        timing << stats.step << "," << format_double(ms) << "\n" << std::flush;
      }
      if (options.on_step) options.on_step(state, stats);
    }
    EpochRecord rec{epoch, state.step, epoch_loss / static_cast<double>(batches.size()),
                    validation_l2(state.denoiser, val_images)};
    result.epochs.push_back(rec);
    if (persist)
      validation << rec.epoch << "," << rec.step << "," << format_double(rec.train_loss) << ","
                 << format_double(rec.validation_l2) << "\n" << std::flush;
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      checkpoint(epoch, name);
    }
  }
  checkpoint(cfg.epochs, "final.ckpt");
  return result;
}

}  // namespace alcn
