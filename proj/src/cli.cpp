#include "alcn/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <iostream>

#include "alcn/config.hpp"
#include "alcn/eval.hpp"
#include "alcn/render.hpp"

#ifndef ALCN_DEFAULT_MNIST_DIR
#define ALCN_DEFAULT_MNIST_DIR "data/mnist"
#endif

namespace alcn::cli {
namespace fs = std::filesystem;

fs::path output_root() {
  const char* env = std::getenv("ALCN_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

// Flags that map one-to-one onto config keys.
struct KeyFlag {
  const char* flag;
  const char* key;
  const char* help;
};

const KeyFlag kDatasetFlags[] = {
    {"--dataset", "dataset.kind", "mnist | cifar10 | folder | synth"},
    {"--data-path", "dataset.path", "dataset directory (mnist defaults to the bundled subset)"},
    {"--category", "dataset.category", "folder datasets: category directory"},
    {"--resolution", "dataset.resolution", "folder/synth image size"},
    {"--channels", "dataset.channels", "folder datasets: 1 or 3"},
    {"--synth-classes", "dataset.synth_classes", "synth: number of shape classes"},
    {"--synth-per-class", "dataset.synth_per_class", "synth: images per class"},
    {"--mode", "protocol.mode", "one_vs_rest | rest_vs_one"},
    {"--target", "protocol.target", "target class name (default: the first class)"},
    {"--split-ratio", "protocol.split_ratio", "train fraction of each normal class"},
    {"--seed", "seed", "random seed (required)"},
};

const KeyFlag kTrainFlags[] = {
    {"--manifest", "protocol.manifest", "pre-built protocol manifest"},
    {"--strategy", "strategy.kind", "alcn | none | blackout | speckle | gaussian"},
    {"--p", "strategy.p", "blackout/speckle pixel probability"},
    {"--sigma", "strategy.sigma", "gaussian noise standard deviation"},
    {"--alpha-low", "strategy.alpha_low", "lower bound of the blend weight"},
    {"--alpha-high", "strategy.alpha_high", "upper bound of the blend weight"},
    {"--loss", "loss.kind", "l2 | ffl"},
    {"--lambda0", "loss.lambda0", "denoiser objective weight"},
    {"--lambda1", "loss.lambda1", "noise generator objective weight"},
    {"--lr-denoiser", "optim.lr_denoiser", "denoiser learning rate"},
    {"--lr-noisegen", "optim.lr_noisegen", "noise generator learning rate"},
    {"--clip-norm", "optim.clip_norm", "global gradient norm clip (0 = off)"},
    {"--epochs", "train.epochs", "training epochs"},
    {"--batch-size", "train.batch_size", "training batch size"},
    {"--log-every", "train.log_every", "metrics.csv logging interval in steps"},
    {"--checkpoint-every", "train.checkpoint_every", "checkpoint interval in epochs"},
    {"--widths", "arch.channel_widths", "encoder channel widths, comma separated"},
    {"--latent-dim", "arch.latent_dim", "denoiser bottleneck width"},
    {"--score-kind", "eval.score_kind", "l2 | ffl"},
    {"--label", "run.label", "row label in reports"},
};

struct FlagValues {
  std::deque<std::pair<const KeyFlag*, std::string>> values;  // stable addresses for CLI11
  std::vector<std::string> sets;
  std::vector<CLI::Option*> options;

  void add(CLI::App& app, std::span<const KeyFlag> flags) {
    for (const auto& f : flags) {
      values.emplace_back(&f, std::string());
      options.push_back(app.add_option(f.flag, values.back().second, f.help));
    }
  }
  void add_set(CLI::App& app) {
    app.add_option("--set", sets, "extra config override key=value (repeatable)");
  }
  KeyValues overrides() const {
    KeyValues kv;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (options[i]->count()) kv[values[i].first->key] = values[i].second;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    return kv;
  }
};

void resolve_dataset_path(DatasetSpec& d) {
  if (d.kind == "mnist" && d.path.empty()) {
    const char* env = std::getenv("ALCN_MNIST_DIR");
    d.path = env && *env ? env : ALCN_DEFAULT_MNIST_DIR;
  }
  if (!d.path.empty()) d.path = fs::absolute(d.path).lexically_normal().string();
}

ExperimentConfig build_config(const std::string& config_path, const FlagValues& flags) {
  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = read_config(config_path);
    cfg.apply(flags.overrides(), "command line");
    resolve_dataset_path(cfg.dataset);
    if (!cfg.manifest.empty()) cfg.manifest = fs::absolute(cfg.manifest).lexically_normal().string();
    // Without a target or manifest the dataset's first class is the target.
    if (cfg.manifest.empty() && cfg.target.empty() && cfg.seed)
      cfg.target = load_dataset(cfg.dataset).class_names.front();
    cfg.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  cfg.fit.seed = *cfg.seed;
  cfg.fit.config_hash = cfg.digest();
  return cfg;
}

// Exclusive ownership of a run directory for the life of one command.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error(dir.string() + " is locked by another command (" +
                               path_.string() + " exists; remove it if that command died)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The lock holds even without the pid note.
    }
  }
  ~RunLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

ProtocolSplit make_split(const ExperimentConfig& cfg, const LabeledImageSet& set) {
  if (!cfg.manifest.empty()) {
    const ProtocolManifest m = read_manifest(cfg.manifest);
    if (m.dataset.identifier() != cfg.dataset.identifier())
      throw std::runtime_error("manifest dataset " + m.dataset.identifier() +
                               " does not match config dataset " + cfg.dataset.identifier());
    return apply_manifest(set, m);
  }
  return build_protocol(set, cfg.protocol, cfg.target, cfg.split_ratio, *cfg.seed);
}

std::string default_run_name(const ExperimentConfig& cfg) {
  std::string target = cfg.target.empty() ? "manifest" : cfg.target;
  return cfg.effective_label() + "-" + cfg.dataset.kind + "-" + to_string(cfg.protocol) + "-" +
         target + "-s" + std::to_string(*cfg.seed);
}

// Grid rows: input, generated noise (ALCN only), corrupted input, reconstruction.
void write_grid(const fs::path& path, const TrainState& state, const ExperimentConfig& cfg,
                const Tensor<float>& samples) {
  const auto& strategy = cfg.fit.train.strategy;
  Rng rng(*cfg.seed + 99);
  std::vector<Tensor<float>> rows{samples};
  Tensor<float> corrupted;
  if (strategy.kind == NoiseKind::kAlcn) {
    const Tensor<float> z = sample_latent(samples.dim(0), rng,
                                          static_cast<std::size_t>(state.noisegen.arch.noise_latent_dim));
    const Tensor<float> noise = forward_noise_generator(state.noisegen, z);
    corrupted = blend(samples, noise, (strategy.alpha.low + strategy.alpha.high) / 2.0);
    rows.push_back(noise);
  } else {
    corrupted = apply_strategy(strategy, samples, rng);
  }
  rows.push_back(corrupted);
  rows.push_back(forward_denoiser(state.denoiser, corrupted));
  write_image_grid(path, rows);
}

int cmd_protocol(const std::string& config_path, const FlagValues& flags, const std::string& out_path,
                 std::ostream& out) {
  ExperimentConfig cfg = build_config(config_path, flags);
  const LabeledImageSet set = load_dataset(cfg.dataset);
  ProtocolSplit split;
  try {
    split = build_protocol(set, cfg.protocol, cfg.target, cfg.split_ratio, *cfg.seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path path =
      out_path.empty() ? output_root() / "manifests" /
                             (cfg.dataset.kind + "-" + to_string(cfg.protocol) + "-" + cfg.target +
                              "-s" + std::to_string(*cfg.seed) + ".manifest")
                       : fs::path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_manifest(path, split, cfg.dataset, set.class_names);
  out << "train=" << split.train_indices.size() << " test=" << split.test_indices.size()
      << " anomalous_test=" << std::count(split.test_anomaly_flags.begin(),
                                          split.test_anomaly_flags.end(), true)
      << "\n";
  out << "manifest=" << path.string() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const FlagValues& flags, const std::string& out_dir,
              bool overwrite, std::ostream& out) {
  ExperimentConfig cfg = build_config(config_path, flags);
  const fs::path dir = !out_dir.empty()            ? fs::path(out_dir)
                       : !cfg.output_dir.empty()   ? fs::path(cfg.output_dir)
                                                   : output_root() / default_run_name(cfg);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite)
      throw UsageError("run directory " + dir.string() +
                       " is not empty (pass --overwrite to replace it)");
    if (fs::exists(dir / ".lock"))
      throw std::runtime_error(dir.string() + " is locked by another command");
    fs::remove_all(dir);
  }
  RunLock lock(dir);
  cfg.output_dir = dir.string();

  const LabeledImageSet set = load_dataset(cfg.dataset);
  const ProtocolSplit split = make_split(cfg, set);
  write_file_atomic(dir / "config.txt", cfg.snapshot_text());
  write_manifest(dir / "manifest.txt", split, cfg.dataset, set.class_names);

  std::vector<std::size_t> grid_idx;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, split.train.size()); ++i) grid_idx.push_back(i);
  const Tensor<float> grid_samples = gather(split.train.images, grid_idx);
  fs::create_directories(dir / "grids");

  FitOptions options;
  options.run_dir = dir;
  options.on_checkpoint = [&](const TrainState& state, int epoch, const fs::path&) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.png", epoch);
    write_grid(dir / "grids" / name, state, cfg, grid_samples);
  };
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult result = fit(cfg.fit, split, options);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  KeyValues summary;
  summary["config_hash"] = cfg.digest();
  summary["label"] = cfg.effective_label();
  summary["dataset"] = cfg.dataset.identifier();
  summary["steps"] = std::to_string(result.state.step);
  summary["epochs"] = std::to_string(cfg.fit.epochs);
  summary["train_images"] = std::to_string(split.train.size());
  summary["final_recon_loss"] =
      result.history.empty() ? "" : format_double(result.history.back().recon_loss_post);
  summary["initial_validation_l2"] = format_double(result.initial_validation_l2);
  summary["final_validation_l2"] = format_double(
      result.epochs.empty() ? result.initial_validation_l2 : result.epochs.back().validation_l2);
  summary["checkpoint"] = (dir / "checkpoints" / "final.ckpt").string();
  summary["csv_schema_version"] = std::to_string(kCsvSchemaVersion);
  summary["wall_seconds"] = format_double(secs);
  write_file_atomic(dir / "train_summary.txt", format_key_values(summary, "alcn training summary"));

  out << "steps=" << result.state.step << " final_validation_l2=" << summary["final_validation_l2"]
      << "\n";
  out << "run_dir=" << dir.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string run, checkpoint, manifest, config, score_kind, out, label;
  std::size_t batch_size = 0;
  bool force = false;
};

int cmd_eval(EvalArgs a, std::ostream& out) {
  if (!a.run.empty()) {
    const fs::path run = a.run;
    if (!fs::is_directory(run)) throw UsageError("run directory not found: " + a.run);
    if (a.checkpoint.empty()) a.checkpoint = (run / "checkpoints" / "final.ckpt").string();
    if (a.manifest.empty()) a.manifest = (run / "manifest.txt").string();
    if (a.config.empty() && fs::exists(run / "config.txt")) a.config = (run / "config.txt").string();
    if (a.out.empty()) a.out = (run / "eval").string();
  }
  if (a.manifest.empty()) throw UsageError("eval needs --manifest (or --run)");
  if (!fs::exists(a.manifest)) throw UsageError("manifest not found: " + a.manifest);
  if (a.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --run)");
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  if (a.out.empty()) a.out = (fs::path(a.checkpoint).parent_path() / "eval").string();

  std::optional<ExperimentConfig> cfg;
  if (!a.config.empty()) {
    try {
      cfg = read_config(a.config);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  const TrainState state = load_checkpoint(
      a.checkpoint, cfg ? std::optional<std::string>(cfg->digest()) : std::nullopt, a.force);

  LossKind kind = cfg ? cfg->score_kind : LossKind::kL2;
  std::size_t batch = cfg ? cfg->eval_batch_size : 64;
  try {
    if (!a.score_kind.empty()) kind = parse_loss_kind(a.score_kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.batch_size) batch = a.batch_size;
  const std::string label = !a.label.empty() ? a.label
                            : cfg            ? cfg->effective_label()
                                             : std::string("model");

  const ProtocolManifest m = read_manifest(a.manifest);
  const LabeledImageSet set = load_dataset(m.dataset);
  const ProtocolSplit split = apply_manifest(set, m);
  std::vector<double> ms;
  const ScoredSet scored = score_set(state.denoiser, split, kind, batch, &ms);
  const EvalReport report = aggregate_report({{m.target_class, scored}}, ms, scored.size());

  KeyValues meta;
  meta["label"] = label;
  meta["dataset"] = m.dataset.identifier();
  meta["class_names"] = join(set.class_names, ',');
  meta["protocol.mode"] = to_string(m.protocol);
  meta["protocol.target"] = m.target_class;
  meta["checkpoint"] = fs::absolute(a.checkpoint).string();
  meta["config_hash"] = state.config_hash;
  meta["test_images"] = std::to_string(scored.size());
  fs::create_directories(a.out);
  write_roc_plot(fs::path(a.out) / "roc.png", report);  // before the summary, which marks completion
  write_report(a.out, report, meta);

  for (const auto& c : report.classes)
    out << "class=" << c.class_name << " AUC=" << format_double(c.auc)
        << " normal_mean=" << format_double(c.normal.mean)
        << " anomalous_mean=" << format_double(c.anomalous.mean) << "\n";
  out << "report_dir=" << a.out << "\n";
  out << "AUC_avg=" << format_double(report.auc_avg) << "\n";
  return kExitOk;
}

int cmd_score(const std::string& checkpoint, const std::string& image, const std::string& kind_name,
              std::ostream& out) {
  if (!fs::exists(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
  if (!fs::exists(image)) throw UsageError("image not found: " + image);
  LossKind kind;
  try {
    kind = parse_loss_kind(kind_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const TrainState state = load_checkpoint(checkpoint);
  const auto& arch = state.denoiser.arch;
  const Tensor<float> img = load_image_file(image, arch.in_channels, arch.resolution);
  out << format_double(anomaly_score(state.denoiser, img, kind)) << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_path,
               const std::string& markdown_path, std::ostream& out) {
  std::vector<RunSummary> summaries;
  for (const auto& r : runs) {
    fs::path dir = r;
    if (!fs::exists(dir)) throw UsageError("run directory not found: " + r);
    if (!fs::exists(dir / "summary.txt") && fs::exists(dir / "eval" / "summary.txt")) dir /= "eval";
    summaries.push_back(read_run_summary(dir));
  }
  const ComparisonTable table = build_comparison(summaries);
  if (!out_path.empty()) write_file_atomic(out_path, table.to_csv());
  if (!markdown_path.empty()) write_file_atomic(markdown_path, table.to_markdown());
  out << table.to_markdown();
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarially learned continuous noise for denoising-autoencoder anomaly detection"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 runtime failure, 2 usage error.\n"
             "ALCN_OUTPUT_ROOT sets the default output root (default: ./runs).");

  std::string config_path, out_path, markdown_path;
  bool overwrite = false;

  auto* protocol = app.add_subcommand("protocol", "write a leave-one-out protocol manifest");
  FlagValues protocol_flags;
  protocol->add_option("--config", config_path, "experiment config file");
  protocol_flags.add(*protocol, kDatasetFlags);
  protocol_flags.add_set(*protocol);
  protocol->add_option("--out", out_path, "manifest path");

  auto* train = app.add_subcommand("train", "train a model into a run directory");
  FlagValues train_flags;
  train->add_option("--config", config_path, "experiment config file");
  train_flags.add(*train, kDatasetFlags);
  train_flags.add(*train, kTrainFlags);
  train_flags.add_set(*train);
  train->add_option("--out", out_path, "run directory");
  train->add_flag("--overwrite", overwrite, "replace a non-empty run directory");

  auto* eval = app.add_subcommand("eval", "score a test split and compute AUC");
  EvalArgs ea;
  eval->add_option("--run", ea.run, "run directory (supplies checkpoint, manifest and config)");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint file");
  eval->add_option("--manifest", ea.manifest, "protocol manifest");
  eval->add_option("--config", ea.config, "config snapshot used to verify the checkpoint");
  eval->add_option("--score-kind", ea.score_kind, "l2 | ffl");
  eval->add_option("--batch-size", ea.batch_size, "scoring batch size");
  eval->add_option("--label", ea.label, "row label in reports");
  eval->add_option("--out", ea.out, "output directory");
  eval->add_flag("--force", ea.force, "accept a checkpoint whose config hash differs");

  auto* score = app.add_subcommand("score", "print the anomaly score of one image");
  std::string score_ckpt, score_image, score_kind = "l2";
  score->add_option("--checkpoint", score_ckpt, "checkpoint file")->required();
  score->add_option("--image", score_image, "image file")->required();
  score->add_option("--score-kind", score_kind, "l2 | ffl");

  auto* report = app.add_subcommand("report", "compare evaluated runs in one table");
  std::vector<std::string> runs;
  report->add_option("runs", runs, "run or eval directories")->required();
  report->add_option("--out", out_path, "CSV output path");
  report->add_option("--markdown", markdown_path, "markdown output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*protocol) return cmd_protocol(config_path, protocol_flags, out_path, out);
    if (*train) return cmd_train(config_path, train_flags, out_path, overwrite, out);
    if (*eval) return cmd_eval(ea, out);
    if (*score) return cmd_score(score_ckpt, score_image, score_kind, out);
    if (*report) return cmd_report(runs, out_path, markdown_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace alcn::cli
