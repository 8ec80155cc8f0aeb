#include "alcn/config.hpp"

#include <functional>
#include <map>

namespace alcn {
namespace fs = std::filesystem;

namespace {

std::string widths_text(const std::vector<int>& w) {
  std::vector<std::string> parts;
  for (int v : w) parts.push_back(std::to_string(v));
  return join(parts, ',');
}

std::vector<int> parse_widths(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : split(s, ','))
    out.push_back(static_cast<int>(parse_int(trim(p), "arch.channel_widths")));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto& F = t;
    F["protocol.mode"] = [](auto& c, const auto& v) { c.protocol = parse_protocol(v); };
    F["protocol.target"] = [](auto& c, const auto& v) { c.target = v; };
    F["protocol.split_ratio"] = [](auto& c, const auto& v) {
      c.split_ratio = parse_double(v, "protocol.split_ratio");
    };
    F["protocol.manifest"] = [](auto& c, const auto& v) { c.manifest = v; };
    F["arch.channel_widths"] = [](auto& c, const auto& v) { c.fit.channel_widths = parse_widths(v); };
    F["arch.latent_dim"] = [](auto& c, const auto& v) {
      c.fit.latent_dim = static_cast<int>(parse_int(v, "arch.latent_dim"));
    };
    F["arch.noise_latent_dim"] = [](auto& c, const auto& v) {
      c.fit.noise_latent_dim = static_cast<int>(parse_int(v, "arch.noise_latent_dim"));
    };
    F["strategy.kind"] = [](auto& c, const auto& v) { c.fit.train.strategy.kind = parse_noise_kind(v); };
    F["strategy.p"] = [](auto& c, const auto& v) { c.fit.train.strategy.p = parse_double(v, "strategy.p"); };
    F["strategy.sigma"] = [](auto& c, const auto& v) {
      c.fit.train.strategy.sigma = parse_double(v, "strategy.sigma");
    };
    F["strategy.alpha_low"] = [](auto& c, const auto& v) {
      c.fit.train.strategy.alpha.low = parse_double(v, "strategy.alpha_low");
    };
    F["strategy.alpha_high"] = [](auto& c, const auto& v) {
      c.fit.train.strategy.alpha.high = parse_double(v, "strategy.alpha_high");
    };
    F["strategy.alpha_per_sample"] = [](auto& c, const auto& v) {
      c.fit.train.strategy.alpha.per_sample = parse_bool(v, "strategy.alpha_per_sample");
    };
    F["loss.kind"] = [](auto& c, const auto& v) { c.fit.train.loss.kind = parse_loss_kind(v); };
    F["loss.focal"] = [](auto& c, const auto& v) { c.fit.train.loss.focal = parse_bool(v, "loss.focal"); };
    F["loss.lambda0"] = [](auto& c, const auto& v) {
      c.fit.train.weights.lambda0 = parse_double(v, "loss.lambda0");
    };
    F["loss.lambda1"] = [](auto& c, const auto& v) {
      c.fit.train.weights.lambda1 = parse_double(v, "loss.lambda1");
    };
    F["optim.lr_denoiser"] = [](auto& c, const auto& v) {
      c.fit.train.optim.lr_denoiser = parse_double(v, "optim.lr_denoiser");
    };
    F["optim.lr_noisegen"] = [](auto& c, const auto& v) {
      c.fit.train.optim.lr_noisegen = parse_double(v, "optim.lr_noisegen");
    };
    F["optim.beta1"] = [](auto& c, const auto& v) { c.fit.train.optim.beta1 = parse_double(v, "optim.beta1"); };
    F["optim.beta2"] = [](auto& c, const auto& v) { c.fit.train.optim.beta2 = parse_double(v, "optim.beta2"); };
    F["optim.eps"] = [](auto& c, const auto& v) { c.fit.train.optim.eps = parse_double(v, "optim.eps"); };
    F["optim.clip_norm"] = [](auto& c, const auto& v) {
      c.fit.train.optim.clip_norm = parse_double(v, "optim.clip_norm");
    };
    F["train.epochs"] = [](auto& c, const auto& v) {
      c.fit.epochs = static_cast<int>(parse_int(v, "train.epochs"));
    };
    F["train.batch_size"] = [](auto& c, const auto& v) { c.fit.batch_size = parse_uint(v, "train.batch_size"); };
    F["train.log_every"] = [](auto& c, const auto& v) {
      c.fit.log_every = static_cast<int>(parse_int(v, "train.log_every"));
    };
    F["train.checkpoint_every"] = [](auto& c, const auto& v) {
      c.fit.checkpoint_every = static_cast<int>(parse_int(v, "train.checkpoint_every"));
    };
    F["train.validation_images"] = [](auto& c, const auto& v) {
      c.fit.validation_images = parse_uint(v, "train.validation_images");
    };
    F["eval.score_kind"] = [](auto& c, const auto& v) { c.score_kind = parse_loss_kind(v); };
    F["eval.batch_size"] = [](auto& c, const auto& v) { c.eval_batch_size = parse_uint(v, "eval.batch_size"); };
    F["seed"] = [](auto& c, const auto& v) {
      if (v.empty())
        c.seed.reset();
      else
        c.seed = parse_uint(v, "seed");
    };
    F["run.label"] = [](auto& c, const auto& v) { c.label = v; };
    F["run.output_dir"] = [](auto& c, const auto& v) { c.output_dir = v; };
    return t;
  }();
  return table;
}

}  // namespace

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv = dataset.to_key_values();
  const auto& t = fit.train;
  kv["protocol.mode"] = to_string(protocol);
  kv["protocol.target"] = target;
  kv["protocol.split_ratio"] = format_double(split_ratio);
  kv["protocol.manifest"] = manifest;
  kv["arch.channel_widths"] = widths_text(fit.channel_widths);
  kv["arch.latent_dim"] = std::to_string(fit.latent_dim);
  kv["arch.noise_latent_dim"] = std::to_string(fit.noise_latent_dim);
  kv["strategy.kind"] = to_string(t.strategy.kind);
  kv["strategy.p"] = format_double(t.strategy.p);
  kv["strategy.sigma"] = format_double(t.strategy.sigma);
  kv["strategy.alpha_low"] = format_double(t.strategy.alpha.low);
  kv["strategy.alpha_high"] = format_double(t.strategy.alpha.high);
  kv["strategy.alpha_per_sample"] = t.strategy.alpha.per_sample ? "true" : "false";
  kv["loss.kind"] = to_string(t.loss.kind);
  kv["loss.focal"] = t.loss.focal ? "true" : "false";
  kv["loss.lambda0"] = format_double(t.weights.lambda0);
  kv["loss.lambda1"] = format_double(t.weights.lambda1);
  kv["optim.lr_denoiser"] = format_double(t.optim.lr_denoiser);
  kv["optim.lr_noisegen"] = format_double(t.optim.lr_noisegen);
  kv["optim.beta1"] = format_double(t.optim.beta1);
  kv["optim.beta2"] = format_double(t.optim.beta2);
  kv["optim.eps"] = format_double(t.optim.eps);
  kv["optim.clip_norm"] = format_double(t.optim.clip_norm);
  kv["train.epochs"] = std::to_string(fit.epochs);
  kv["train.batch_size"] = std::to_string(fit.batch_size);
  kv["train.log_every"] = std::to_string(fit.log_every);
  kv["train.checkpoint_every"] = std::to_string(fit.checkpoint_every);
  kv["train.validation_images"] = std::to_string(fit.validation_images);
  kv["eval.score_kind"] = to_string(score_kind);
  kv["eval.batch_size"] = std::to_string(eval_batch_size);
  kv["seed"] = seed ? std::to_string(*seed) : "";
  kv["run.label"] = label;
  kv["run.output_dir"] = output_dir;
  return kv;
}

void ExperimentConfig::apply(const KeyValues& kv, std::string_view source) {
  KeyValues ds = dataset.to_key_values();
  bool touched_dataset = false;
  for (const auto& [key, value] : kv) {
    if (ds.count(key)) {
      ds[key] = value;
      touched_dataset = true;
      continue;
    }
    auto it = setters().find(key);
    if (it == setters().end())
      throw std::invalid_argument(std::string(source) + ": unknown config key '" + key + "'");
    try {
      it->second(*this, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(source) + ": " + key + ": " + e.what());
    }
  }
  if (touched_dataset) dataset = DatasetSpec::from_key_values(ds);
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv, std::string_view source) {
  ExperimentConfig c;
  c.apply(kv, source);
  return c;
}

std::string ExperimentConfig::snapshot_text() const {
  return format_key_values(to_key_values(), "alcn experiment config");
}

std::string ExperimentConfig::digest() const {
  KeyValues kv = to_key_values();
  std::erase_if(kv, [](const auto& e) { return e.first.rfind("run.", 0) == 0; });
  return sha256_hex(format_key_values(kv));
}

std::string ExperimentConfig::effective_label() const {
  return label.empty() ? to_string(fit.train.strategy.kind) : label;
}

void ExperimentConfig::validate() const {
  if (!seed) throw std::invalid_argument("config: seed is required");
  fit.validate();
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw std::invalid_argument("config: protocol.split_ratio must be in (0, 1)");
  if (manifest.empty() && target.empty())
    throw std::invalid_argument("config: protocol.target (or protocol.manifest) is required");
  if (!manifest.empty() && !fs::exists(manifest))
    throw std::invalid_argument("config: manifest not found: " + manifest);
  if ((dataset.kind == "mnist" || dataset.kind == "cifar10" || dataset.kind == "folder") &&
      !fs::exists(dataset.path))
    throw std::invalid_argument("config: dataset path not found: '" + dataset.path + "'");
  if (eval_batch_size < 1) throw std::invalid_argument("config: eval.batch_size must be >= 1");
}

ExperimentConfig read_config(const fs::path& path) {
  if (!fs::exists(path)) throw std::invalid_argument("config file not found: " + path.string());
  return ExperimentConfig::from_key_values(parse_key_values(read_file(path), path.string()),
                                           path.string());
}

}  // namespace alcn
