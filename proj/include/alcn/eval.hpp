#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "alcn/data.hpp"
#include "alcn/loss.hpp"
#include "alcn/model.hpp"
#include "alcn/util.hpp"

namespace alcn {

/// Reconstruction-error scores with their ground-truth anomaly flags.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<bool> anomaly_flags;
  LossKind score_kind = LossKind::kL2;

  std::size_t size() const { return scores.size(); }
  std::size_t positives() const;  // anomalous count
  std::size_t negatives() const;
  /// Throws std::invalid_argument on length mismatch or a negative/non-finite score.
  void validate() const;
};

/// Per-image reconstruction error of clean images, mean-reduced. kFfl uses
/// the focal variant. images is (B, C, H, W).
std::vector<double> reconstruction_scores(const ModelParams<float>& denoiser,
                                          const Tensor<float>& images, LossKind kind);

/// Score of a single (C, H, W) or (1, C, H, W) image.
double anomaly_score(const ModelParams<float>& denoiser, const Tensor<float>& image,
                     LossKind kind);

ScoredSet score_set(const ModelParams<float>& denoiser, const Tensor<float>& images,
                    const std::vector<bool>& anomaly_flags, LossKind kind,
                    std::size_t batch_size = 64, std::vector<double>* batch_ms = nullptr);
ScoredSet score_set(const ModelParams<float>& denoiser, const ProtocolSplit& split, LossKind kind,
                    std::size_t batch_size = 64, std::vector<double>* batch_ms = nullptr);

/// Probability that an anomalous image outscores a normal one, ties counted
/// half. Throws when either group is empty.
double roc_auc(const ScoredSet& scored);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// One point per distinct score threshold, from (0, 0) to (1, 1).
std::vector<RocPoint> roc_curve(const ScoredSet& scored);
double trapezoid_area(const std::vector<RocPoint>& curve);

struct ScoreSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};
ScoreSummary summarize(std::vector<double> values);

struct ClassEval {
  std::string class_name;
  ScoredSet scored;
  double auc = 0.0;
  std::vector<RocPoint> roc;
  ScoreSummary normal;
  ScoreSummary anomalous;
};

struct EvalReport {
  std::vector<ClassEval> classes;  // in the order given to aggregate_report
  double auc_avg = 0.0;
  double ms_per_batch = 0.0;
  double ms_per_image = 0.0;

  std::map<std::string, double> per_class() const;
};

/// auc_avg is the unweighted mean over classes. Timings are milliseconds per
/// scoring batch; images is the number of images they cover.
EvalReport aggregate_report(const std::vector<std::pair<std::string, ScoredSet>>& per_class,
                            const std::vector<double>& batch_ms = {}, std::size_t images = 0);

inline constexpr int kCsvSchemaVersion = 1;

/// summary.txt (key = value), scores.csv and roc.csv. `meta` is merged into the summary.
void write_report(const std::filesystem::path& dir, const EvalReport& report,
                  const KeyValues& meta = {});

/// Parsed summary.txt of an evaluated run.
struct RunSummary {
  std::filesystem::path dir;
  std::string label;    // strategy / model name used as the table row
  std::string dataset;  // dataset identifier; must agree across a report
  std::vector<std::string> class_names;
  std::map<std::string, double> auc;
  double auc_avg = 0.0;
};
RunSummary read_run_summary(const std::filesystem::path& dir);

struct ComparisonTable {
  std::vector<std::string> columns;  // classes in dataset order, then AUC_avg
  std::vector<std::string> rows;     // labels in first-seen order
  /// cells[r][c]; NaN marks a class a row has no run for.
  std::vector<std::vector<double>> cells;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Rows are run labels, columns the evaluated classes plus AUC_avg (mean of
/// that row's classes). Throws if the runs come from different datasets or a
/// label evaluates the same class twice.
ComparisonTable build_comparison(const std::vector<RunSummary>& runs);

}  // namespace alcn
