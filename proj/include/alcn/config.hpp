#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "alcn/data.hpp"
#include "alcn/loss.hpp"
#include "alcn/train.hpp"
#include "alcn/util.hpp"

namespace alcn {

/// Everything a train/eval run depends on, as flat dotted keys.
///
///   dataset.kind = mnist          protocol.mode = one_vs_rest
///   protocol.target = 3           optim.lr_denoiser = 1e-05
///   strategy.kind = alcn          train.epochs = 50
///   seed = 7
///
/// Keys under `run.` (label, output_dir) describe where results go and are
/// left out of the digest.
struct ExperimentConfig {
  DatasetSpec dataset;
  Protocol protocol = Protocol::kOneVsRest;
  std::string target;
  double split_ratio = 0.8;
  /// Optional pre-built manifest; when set it replaces the protocol fields.
  std::string manifest;
  FitConfig fit;
  LossKind score_kind = LossKind::kL2;
  std::size_t eval_batch_size = 64;
  std::optional<std::uint64_t> seed;
  std::string label;  // row name in reports; defaults to the strategy kind
  std::string output_dir;

  KeyValues to_key_values() const;
  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static ExperimentConfig from_key_values(const KeyValues& kv, std::string_view source = "<config>");
  /// Applies kv on top of this config (same key set as from_key_values).
  void apply(const KeyValues& kv, std::string_view source = "<config>");

  /// Snapshot text: every key, sorted.
  std::string snapshot_text() const;
  /// sha256 of the snapshot without the run.* keys.
  std::string digest() const;
  std::string effective_label() const;

  /// Value checks plus: seed present, dataset and manifest paths exist.
  void validate() const;
};

ExperimentConfig read_config(const std::filesystem::path& path);

}  // namespace alcn
