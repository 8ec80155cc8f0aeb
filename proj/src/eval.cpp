#include "alcn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace alcn {
namespace fs = std::filesystem;

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(anomaly_flags.begin(), anomaly_flags.end(), true));
}

std::size_t ScoredSet::negatives() const { return anomaly_flags.size() - positives(); }

void ScoredSet::validate() const {
  if (scores.size() != anomaly_flags.size())
    throw std::invalid_argument("scored set has " + std::to_string(scores.size()) +
                                " scores but " + std::to_string(anomaly_flags.size()) + " flags");
  for (double s : scores)
    if (!(std::isfinite(s) && s >= 0.0))
      throw std::invalid_argument("scores must be finite and >= 0");
}

std::vector<double> reconstruction_scores(const ModelParams<float>& denoiser,
                                          const Tensor<float>& images, LossKind kind) {
  const Tensor<float> out = forward_denoiser(denoiser, images);
  return kind == LossKind::kL2 ? l2_per_sample(images, out) : ffl_per_sample(images, out, true);
}

double anomaly_score(const ModelParams<float>& denoiser, const Tensor<float>& image,
                     LossKind kind) {
  Tensor<float> batch = image;
  if (image.rank() == 3) {
    Shape s = image.shape();
    s.insert(s.begin(), 1);
    batch = image.reshaped(s);
  } else if (image.rank() != 4 || image.dim(0) != 1) {
    throw std::invalid_argument("anomaly_score: expected a (C, H, W) image, got " +
                                to_string(image.shape()));
  }
  return reconstruction_scores(denoiser, batch, kind).front();
}

ScoredSet score_set(const ModelParams<float>& denoiser, const Tensor<float>& images,
                    const std::vector<bool>& anomaly_flags, LossKind kind, std::size_t batch_size,
                    std::vector<double>* batch_ms) {
  if (batch_size < 1) throw std::invalid_argument("score_set: batch_size must be >= 1");
  ScoredSet out;
  out.score_kind = kind;
  out.anomaly_flags = anomaly_flags;
  const std::size_t n = images.empty() ? 0 : images.dim(0);
  if (n != anomaly_flags.size())
    throw std::invalid_argument("score_set: " + std::to_string(n) + " images but " +
                                std::to_string(anomaly_flags.size()) + " flags");
  out.scores.reserve(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = reconstruction_scores(denoiser, gather(images, idx), kind);
    if (batch_ms)
      batch_ms->push_back(
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    out.scores.insert(out.scores.end(), s.begin(), s.end());
  }
  return out;
}

ScoredSet score_set(const ModelParams<float>& denoiser, const ProtocolSplit& split, LossKind kind,
                    std::size_t batch_size, std::vector<double>* batch_ms) {
  return score_set(denoiser, split.test.images, split.test_anomaly_flags, kind, batch_size,
                   batch_ms);
}

namespace {

void require_both_groups(const ScoredSet& s) {
  s.validate();
  if (s.positives() == 0 || s.negatives() == 0)
    throw std::invalid_argument("AUC is undefined: need at least one normal and one anomalous score");
}

// Indices sorted by descending score.
std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double roc_auc(const ScoredSet& scored) {
  require_both_groups(scored);
  // Walk tie groups from the top; each anomalous image beats every normal
  // below its group and ties with the normals inside it. Twice the pair count
  // stays an integer, so the result equals the pairwise definition exactly.
  const auto idx = order_desc(scored.scores);
  const std::uint64_t P = scored.positives(), N = scored.negatives();
  std::uint64_t normals_below = N, twice_pairs = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < idx.size() && scored.scores[idx[j]] == scored.scores[idx[i]]) {
      (scored.anomaly_flags[idx[j]] ? pos : neg) += 1;
      ++j;
    }
    normals_below -= neg;
    twice_pairs += pos * (2 * normals_below + neg);
    i = j;
  }
  return static_cast<double>(twice_pairs) / static_cast<double>(2 * P * N);
}

std::vector<RocPoint> roc_curve(const ScoredSet& scored) {
  require_both_groups(scored);
  const auto idx = order_desc(scored.scores);
  const double P = static_cast<double>(scored.positives());
  const double N = static_cast<double>(scored.negatives());
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scored.scores[idx[j]] == scored.scores[idx[i]]) {
      (scored.anomaly_flags[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    curve.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P});
    i = j;
  }
  return curve;
}

double trapezoid_area(const std::vector<RocPoint>& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

ScoreSummary summarize(std::vector<double> v) {
  ScoreSummary s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  s.min = v.front();
  s.max = v.back();
  const std::size_t n = v.size();
  s.median = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(n));
  return s;
}

std::map<std::string, double> EvalReport::per_class() const {
  std::map<std::string, double> out;
  for (const auto& c : classes) out[c.class_name] = c.auc;
  return out;
}

EvalReport aggregate_report(const std::vector<std::pair<std::string, ScoredSet>>& per_class,
                            const std::vector<double>& batch_ms, std::size_t images) {
  if (per_class.empty()) throw std::invalid_argument("aggregate_report: no classes");
  EvalReport r;
  double sum = 0.0;
  for (const auto& [name, scored] : per_class) {
    ClassEval c;
    c.class_name = name;
    c.scored = scored;
    c.auc = roc_auc(scored);
    c.roc = roc_curve(scored);
    std::vector<double> normal, anomalous;
    for (std::size_t i = 0; i < scored.size(); ++i)
      (scored.anomaly_flags[i] ? anomalous : normal).push_back(scored.scores[i]);
    c.normal = summarize(std::move(normal));
    c.anomalous = summarize(std::move(anomalous));
    sum += c.auc;
    r.classes.push_back(std::move(c));
  }
  r.auc_avg = sum / static_cast<double>(r.classes.size());
  if (!batch_ms.empty()) {
    const double total = std::accumulate(batch_ms.begin(), batch_ms.end(), 0.0);
    r.ms_per_batch = total / static_cast<double>(batch_ms.size());
    if (images > 0) r.ms_per_image = total / static_cast<double>(images);
  }
  return r;
}

namespace {

void put_summary(KeyValues& kv, const std::string& prefix, const ScoreSummary& s) {
  kv[prefix + ".count"] = std::to_string(s.count);
  kv[prefix + ".mean"] = format_double(s.mean);
  kv[prefix + ".stddev"] = format_double(s.stddev);
  kv[prefix + ".min"] = format_double(s.min);
  kv[prefix + ".median"] = format_double(s.median);
  kv[prefix + ".max"] = format_double(s.max);
}

// RFC 4180 quoting for free-text fields.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_report(const fs::path& dir, const EvalReport& report, const KeyValues& meta) {
  fs::create_directories(dir);
  KeyValues kv = meta;
  kv["csv_schema_version"] = std::to_string(kCsvSchemaVersion);
  std::vector<std::string> names;
  for (const auto& c : report.classes) {
    names.push_back(c.class_name);
    kv["auc." + c.class_name] = format_double(c.auc);
    put_summary(kv, "scores." + c.class_name + ".normal", c.normal);
    put_summary(kv, "scores." + c.class_name + ".anomalous", c.anomalous);
  }
  kv["evaluated_classes"] = join(names, ',');
  kv["auc_avg"] = format_double(report.auc_avg);
  kv["score_kind"] = to_string(report.classes.front().scored.score_kind);
  kv["timing.ms_per_batch"] = format_double(report.ms_per_batch);
  kv["timing.ms_per_image"] = format_double(report.ms_per_image);

  std::string scores = "class,index,score,anomalous\r\n";
  std::string roc = "class,fpr,tpr\r\n";
  for (const auto& c : report.classes) {
    for (std::size_t i = 0; i < c.scored.size(); ++i)
      scores += csv_field(c.class_name) + "," + std::to_string(i) + "," +
                format_double(c.scored.scores[i]) + "," +
                (c.scored.anomaly_flags[i] ? "1" : "0") + "\r\n";
    for (const auto& p : c.roc)
      roc += csv_field(c.class_name) + "," + format_double(p.fpr) + "," + format_double(p.tpr) +
             "\r\n";
  }
  write_file_atomic(dir / "scores.csv", scores);
  write_file_atomic(dir / "roc.csv", roc);
  // The summary goes last: its presence marks a completed evaluation.
  write_file_atomic(dir / "summary.txt", format_key_values(kv, "alcn evaluation summary"));
}

RunSummary read_run_summary(const fs::path& dir) {
  const fs::path path = dir / "summary.txt";
  if (!fs::exists(path))
    throw std::runtime_error(dir.string() + " has no summary.txt (not evaluated, or the run crashed)");
  const KeyValues kv = parse_key_values(read_file(path), path.string());
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(path.string() + ": missing key " + key);
    return it->second;
  };
  RunSummary s;
  s.dir = dir;
  s.label = kv.count("label") ? kv.at("label") : dir.filename().string();
  s.dataset = need("dataset");
  s.class_names = split(need("class_names"), ',');
  for (const auto& c : split(need("evaluated_classes"), ','))
    s.auc[c] = parse_double(need("auc." + c), "auc." + c);
  s.auc_avg = parse_double(need("auc_avg"), "auc_avg");
  return s;
}

ComparisonTable build_comparison(const std::vector<RunSummary>& runs) {
  if (runs.empty()) throw std::invalid_argument("report: no runs given");
  for (const auto& r : runs)
    if (r.dataset != runs.front().dataset || r.class_names != runs.front().class_names)
      throw std::invalid_argument("report: runs use different datasets (" + runs.front().dataset +
                                  " in " + runs.front().dir.string() + " vs " + r.dataset +
                                  " in " + r.dir.string() + ")");
  std::vector<std::map<std::string, double>> row_auc;
  ComparisonTable t;
  for (const auto& r : runs) {
    auto it = std::find(t.rows.begin(), t.rows.end(), r.label);
    std::size_t row = static_cast<std::size_t>(it - t.rows.begin());
    if (it == t.rows.end()) {
      t.rows.push_back(r.label);
      row_auc.emplace_back();
    }
    for (const auto& [cls, auc] : r.auc)
      if (!row_auc[row].emplace(cls, auc).second)
        throw std::invalid_argument("report: label '" + r.label + "' evaluates class '" + cls +
                                    "' more than once");
  }
  for (const auto& c : runs.front().class_names)
    for (const auto& m : row_auc)
      if (m.count(c)) {
        t.columns.push_back(c);
        break;
      }
  t.columns.push_back("AUC_avg");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& m : row_auc) {
    std::vector<double> row;
    double sum = 0.0;
    for (std::size_t c = 0; c + 1 < t.columns.size(); ++c) {
      auto it = m.find(t.columns[c]);
      row.push_back(it == m.end() ? nan : it->second);
      if (it != m.end()) sum += it->second;
    }
    row.push_back(sum / static_cast<double>(m.size()));
    t.cells.push_back(std::move(row));
  }
  return t;
}

namespace {

std::string cell(double v, bool exact) {
  if (std::isnan(v)) return "";
  if (exact) return format_double(v);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string ComparisonTable::to_csv() const {
  std::string out = "model";
  for (const auto& c : columns) out += "," + csv_field(c);
  out += "\r\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += csv_field(rows[r]);
    for (double v : cells[r]) out += "," + cell(v, true);
    out += "\r\n";
  }
  return out;
}

std::string ComparisonTable::to_markdown() const {
  std::string out = "| model |";
  for (const auto& c : columns) out += " " + c + " |";
  out += "\n|---|";
  for (std::size_t c = 0; c < columns.size(); ++c) out += "---|";
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "| " + rows[r] + " |";
    for (double v : cells[r]) out += " " + (std::isnan(v) ? std::string("-") : cell(v, false)) + " |";
    out += "\n";
  }
  return out;
}

}  // namespace alcn
