#include "alcn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <set>

namespace alcn {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// LabeledImageSet

void LabeledImageSet::validate() const {
  if (images.rank() != 4) throw std::invalid_argument("image set must be (N, C, H, W)");
  if (images.dim(0) != labels.size())
    throw std::invalid_argument("image set has " + std::to_string(images.dim(0)) + " images but " +
                                std::to_string(labels.size()) + " labels");
  if (images.dim(1) != 1 && images.dim(1) != 3)
    throw std::invalid_argument("image set channels must be 1 or 3");
  if (images.dim(2) != images.dim(3)) throw std::invalid_argument("image set images must be square");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= class_names.size())
      throw std::invalid_argument("label " + std::to_string(l) + " does not index class_names");
  for (float v : images.values())
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("pixel value outside [0, 1]");
}

Tensor<float> gather(const Tensor<float>& images, std::span<const std::size_t> indices) {
  Shape shape = images.shape();
  const std::size_t per = shape.empty() || shape[0] == 0 ? 0 : images.size() / shape[0];
  shape[0] = indices.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= images.dim(0)) throw std::out_of_range("gather: index out of range");
    std::memcpy(out.data() + i * per, images.data() + indices[i] * per, per * sizeof(float));
  }
  return out;
}

LabeledImageSet LabeledImageSet::subset(std::span<const std::size_t> indices) const {
  LabeledImageSet out;
  out.images = gather(images, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  out.class_names = class_names;
  return out;
}

int LabeledImageSet::class_index(std::string_view name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown class '" + std::string(name) +
                              "'; valid classes: " + join(class_names, ','));
}

// ---------------------------------------------------------------------------
// MNIST IDX

namespace {

std::vector<unsigned char> read_maybe_gzip(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("no such file: " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes;
  std::array<unsigned char, 1 << 16> buf{};
  int n = 0;
  while ((n = gzread(f, buf.data(), buf.size())) > 0) bytes.insert(bytes.end(), buf.begin(), buf.begin() + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError("compressed stream", "corrupt gzip stream in " + path.string());
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

LabeledImageSet load_mnist_idx(const fs::path& images_path, const fs::path& labels_path) {
  const auto img = read_maybe_gzip(images_path);
  const auto lab = read_maybe_gzip(labels_path);
  const std::string ip = images_path.string(), lp = labels_path.string();

  if (img.size() < 16) throw FormatError("images header", ip + ": file shorter than IDX header");
  if (be32(img, 0) != 0x00000803)
    throw FormatError("images magic",
                      ip + ": images magic " + hex32(be32(img, 0)) + ", expected 0x00000803");
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (rows != cols)
    throw FormatError("images rows/cols", ip + ": non-square images " + std::to_string(rows) +
                                              "x" + std::to_string(cols));
  if (img.size() != 16 + n * rows * cols)
    throw FormatError("images count", ip + ": header declares " + std::to_string(n) + " images of " +
                                          std::to_string(rows) + "x" + std::to_string(cols) +
                                          " but payload has " + std::to_string(img.size() - 16) +
                                          " bytes");

  if (lab.size() < 8) throw FormatError("labels header", lp + ": file shorter than IDX header");
  if (be32(lab, 0) != 0x00000801)
    throw FormatError("labels magic",
                      lp + ": labels magic " + hex32(be32(lab, 0)) + ", expected 0x00000801");
  if (be32(lab, 4) != n)
    throw FormatError("labels count", lp + ": " + std::to_string(be32(lab, 4)) +
                                          " labels for " + std::to_string(n) + " images");
  if (lab.size() != 8 + n)
    throw FormatError("labels count", lp + ": payload length does not match label count");

  LabeledImageSet set;
  set.images = Tensor<float>({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i)
    set.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9)
      throw FormatError("labels value", lp + ": label " + std::to_string(lab[8 + i]) +
                                            " at index " + std::to_string(i) + " is not a digit");
    set.labels[i] = lab[8 + i];
  }
  for (int d = 0; d < 10; ++d) set.class_names.push_back(std::to_string(d));
  return set;
}

namespace {

LabeledImageSet concat(std::vector<LabeledImageSet> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: nothing to concatenate");
  if (parts.size() == 1) return std::move(parts.front());
  LabeledImageSet out;
  out.class_names = parts.front().class_names;
  Shape shape = parts.front().images.shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.images.rank() == 4 &&
        !std::equal(shape.begin() + 1, shape.end(), p.images.shape().begin() + 1))
      throw std::invalid_argument("concat: image shapes differ");
    total += p.size();
  }
  shape[0] = total;
  out.images = Tensor<float>(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.images.values().begin(), p.images.values().end(), out.images.data() + off);
    off += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

LabeledImageSet load_mnist_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("MNIST directory not found: " + dir.string());
  std::vector<fs::path> image_files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.find("images-idx3-ubyte") != std::string::npos) image_files.push_back(e.path());
  }
  std::sort(image_files.begin(), image_files.end());
  if (image_files.empty())
    throw std::runtime_error("no *images-idx3-ubyte files in " + dir.string());
  std::vector<LabeledImageSet> parts;
  for (const auto& img : image_files) {
    std::string name = img.filename().string();
    name.replace(name.find("images-idx3-ubyte"), 17, "labels-idx1-ubyte");
    parts.push_back(load_mnist_idx(img, img.parent_path() / name));
  }
  return concat(std::move(parts));
}

// ---------------------------------------------------------------------------
// CIFAR-10

LabeledImageSet load_cifar10_binary(const fs::path& dir) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  static const std::vector<std::string> kFiles{"data_batch_1.bin", "data_batch_2.bin",
                                               "data_batch_3.bin", "data_batch_4.bin",
                                               "data_batch_5.bin", "test_batch.bin"};
  std::vector<std::vector<unsigned char>> blobs;
  std::size_t total = 0;
  for (const auto& f : kFiles) {
    const fs::path p = dir / f;
    if (!fs::exists(p)) throw std::runtime_error("CIFAR-10 batch file missing: " + p.string());
    const std::string bytes = read_file(p);
    if (bytes.empty()) warn("CIFAR-10 batch " + p.string() + " is empty");
    if (bytes.size() % kRecord != 0)
      throw FormatError("record", p.string() + ": truncated record at byte offset " +
                                      std::to_string(bytes.size() / kRecord * kRecord) +
                                      " (file length " + std::to_string(bytes.size()) +
                                      " is not a multiple of 3073)");
    blobs.emplace_back(bytes.begin(), bytes.end());
    total += bytes.size() / kRecord;
  }
  LabeledImageSet set;
  set.class_names = {"airplane", "automobile", "bird", "cat", "deer",
                     "dog",      "frog",       "horse", "ship", "truck"};
  set.images = Tensor<float>({total, 3, 32, 32});
  set.labels.reserve(total);
  std::size_t i = 0;
  for (const auto& blob : blobs) {
    for (std::size_t off = 0; off < blob.size(); off += kRecord, ++i) {
      if (blob[off] > 9)
        throw FormatError("label", "CIFAR-10 label " + std::to_string(blob[off]) +
                                       " at byte offset " + std::to_string(off));
      set.labels.push_back(blob[off]);
      float* dst = set.images.data() + i * (kRecord - 1);
      for (std::size_t k = 1; k < kRecord; ++k) dst[k - 1] = static_cast<float>(blob[off + k]) / 255.0f;
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Image folders

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path())))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Reads, converts and resizes one image into dst as (C, res, res) floats.
bool decode_image(const fs::path& path, int channels, int resolution, float* dst) {
  cv::Mat m = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (m.empty()) return false;
  if (channels == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  if (m.rows != resolution || m.cols != resolution)
    cv::resize(m, m, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
  m.convertTo(m, CV_32F, 1.0 / 255.0);
  const std::size_t res = static_cast<std::size_t>(resolution);
  const std::size_t C = static_cast<std::size_t>(channels);
  for (std::size_t y = 0; y < res; ++y) {
    const float* row = m.ptr<float>(static_cast<int>(y));
    for (std::size_t x = 0; x < res; ++x)
      for (std::size_t c = 0; c < C; ++c) dst[(c * res + y) * res + x] = row[x * C + c];
  }
  return true;
}

}  // namespace

Tensor<float> load_image_file(const fs::path& path, int channels, int resolution) {
  if (!fs::exists(path)) throw std::runtime_error("no such image: " + path.string());
  if (channels != 1 && channels != 3) throw std::invalid_argument("image channels must be 1 or 3");
  const auto res = static_cast<std::size_t>(resolution);
  Tensor<float> out({static_cast<std::size_t>(channels), res, res});
  if (!decode_image(path, channels, resolution, out.data()))
    throw std::runtime_error("could not decode image " + path.string());
  return out;
}

LabeledImageSet load_image_folder(const fs::path& root, const FolderLayout& layout) {
  if (!fs::is_directory(root)) throw std::runtime_error("image folder root not found: " + root.string());
  if (layout.channels != 1 && layout.channels != 3)
    throw std::invalid_argument("image folder channels must be 1 or 3");
  if (layout.resolution < 1) throw std::invalid_argument("image folder resolution must be >= 1");

  std::vector<fs::path> categories;
  if (!layout.category.empty()) {
    if (!fs::is_directory(root / layout.category))
      throw std::runtime_error("category directory not found: " + (root / layout.category).string());
    categories.push_back(root / layout.category);
  } else {
    categories = sorted_entries(root, true);
  }

  struct Item {
    fs::path path;
    std::string condition;
  };
  std::vector<Item> items;
  std::set<std::string> conditions;
  for (const auto& cat : categories) {
    std::size_t found = 0;
    for (const auto& split : layout.splits) {
      const fs::path sdir = cat / split;
      if (!fs::is_directory(sdir)) continue;
      for (const auto& cond : sorted_entries(sdir, true))
        for (const auto& img : sorted_entries(cond, false)) {
          items.push_back({img, cond.filename().string()});
          conditions.insert(cond.filename().string());
          ++found;
        }
    }
    if (found == 0) throw std::runtime_error("no images found under class directory " + cat.string());
  }

  LabeledImageSet set;
  if (conditions.count("good")) set.class_names.push_back("good");
  for (const auto& c : conditions)
    if (c != "good") set.class_names.push_back(c);

  const std::size_t res = static_cast<std::size_t>(layout.resolution);
  const std::size_t C = static_cast<std::size_t>(layout.channels);
  set.images = Tensor<float>({items.size(), C, res, res});
  set.labels.reserve(items.size());
  std::vector<std::string> undecodable;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!decode_image(items[i].path, layout.channels, layout.resolution,
                      set.images.data() + i * C * res * res)) {
      undecodable.push_back(items[i].path.string());
      continue;
    }
    set.labels.push_back(set.class_index(items[i].condition));
  }
  if (!undecodable.empty())
    throw std::runtime_error("could not decode " + std::to_string(undecodable.size()) +
                             " image(s): " + join(undecodable, ','));
  return set;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

LabeledImageSet synth_dataset(int num_classes, int per_class, int resolution, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || resolution < 1)
    throw std::invalid_argument("synth_dataset: arguments must be positive");
  if (num_classes > kSynthPrimitives)
    throw std::invalid_argument("synth_dataset: at most " + std::to_string(kSynthPrimitives) +
                                " classes are available, requested " +
                                std::to_string(num_classes));
  static const std::vector<std::string> kNames{"disk",     "square", "cross", "ring",
                                               "triangle", "hbar",   "vbar",  "diagonal"};
  const auto inside = [](int cls, double dx, double dy, double r) {
    const double d = std::hypot(dx, dy);
    switch (cls) {
      case 0: return d <= r;
      case 1: return std::max(std::abs(dx), std::abs(dy)) <= 0.85 * r;
      case 2: return (std::abs(dx) <= 0.25 * r && std::abs(dy) <= r) ||
                     (std::abs(dy) <= 0.25 * r && std::abs(dx) <= r);
      case 3: return d <= r && d >= 0.6 * r;
      case 4: return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= 0.5 * (dy + r);
      case 5: return std::abs(dy) <= 0.25 * r && std::abs(dx) <= r;
      case 6: return std::abs(dx) <= 0.25 * r && std::abs(dy) <= r;
      default: return std::abs(dx - dy) <= 0.3 * r && std::abs(dx) <= r;
    }
  };

  const std::size_t res = static_cast<std::size_t>(resolution);
  const std::size_t n = static_cast<std::size_t>(num_classes) * per_class;
  LabeledImageSet set;
  set.class_names.assign(kNames.begin(), kNames.begin() + num_classes);
  set.images = Tensor<float>({n, 1, res, res});
  set.labels.reserve(n);
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t i = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    for (int k = 0; k < per_class; ++k, ++i) {
      const double jitter = resolution / 8.0;
      const double cx = resolution / 2.0 + (2 * unit(rng) - 1) * jitter;
      const double cy = resolution / 2.0 + (2 * unit(rng) - 1) * jitter;
      const double r = resolution * 0.3 * (0.8 + 0.4 * unit(rng));
      const float intensity = static_cast<float>(0.7 + 0.3 * unit(rng));
      float* dst = set.images.data() + i * res * res;
      for (std::size_t y = 0; y < res; ++y)
        for (std::size_t x = 0; x < res; ++x)
          if (inside(cls, x + 0.5 - cx, y + 0.5 - cy, r)) dst[y * res + x] = intensity;
      set.labels.push_back(cls);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Dataset specs

KeyValues DatasetSpec::to_key_values() const {
  KeyValues kv;
  kv["dataset.kind"] = kind;
  kv["dataset.path"] = path;
  kv["dataset.category"] = category;
  kv["dataset.resolution"] = std::to_string(resolution);
  kv["dataset.channels"] = std::to_string(channels);
  kv["dataset.synth_classes"] = std::to_string(synth_classes);
  kv["dataset.synth_per_class"] = std::to_string(synth_per_class);
  kv["dataset.synth_seed"] = std::to_string(synth_seed);
  return kv;
}

DatasetSpec DatasetSpec::from_key_values(const KeyValues& kv) {
  DatasetSpec d;
  const auto get = [&](const char* k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("dataset.kind")) d.kind = *v;
  if (auto v = get("dataset.path")) d.path = *v;
  if (auto v = get("dataset.category")) d.category = *v;
  if (auto v = get("dataset.resolution")) d.resolution = static_cast<int>(parse_int(*v, "dataset.resolution"));
  if (auto v = get("dataset.channels")) d.channels = static_cast<int>(parse_int(*v, "dataset.channels"));
  if (auto v = get("dataset.synth_classes"))
    d.synth_classes = static_cast<int>(parse_int(*v, "dataset.synth_classes"));
  if (auto v = get("dataset.synth_per_class"))
    d.synth_per_class = static_cast<int>(parse_int(*v, "dataset.synth_per_class"));
  if (auto v = get("dataset.synth_seed")) d.synth_seed = parse_uint(*v, "dataset.synth_seed");
  return d;
}

std::string DatasetSpec::identifier() const {
  if (kind == "synth")
    return "synth/c" + std::to_string(synth_classes) + "x" + std::to_string(synth_per_class) +
           "/r" + std::to_string(resolution ? resolution : 28) + "/s" + std::to_string(synth_seed);
  if (kind == "folder")
    return "folder/" + (category.empty() ? std::string("*") : category) + "/r" +
           std::to_string(resolution ? resolution : 256);
  return kind;
}

LabeledImageSet load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "mnist") return load_mnist_dir(spec.path);
  if (spec.kind == "cifar10") return load_cifar10_binary(spec.path);
  if (spec.kind == "folder") {
    FolderLayout layout;
    layout.resolution = spec.resolution ? spec.resolution : 256;
    layout.channels = spec.channels ? spec.channels : 3;
    layout.category = spec.category;
    return load_image_folder(spec.path, layout);
  }
  if (spec.kind == "synth")
    return synth_dataset(spec.synth_classes, spec.synth_per_class,
                         spec.resolution ? spec.resolution : 28, spec.synth_seed);
  throw std::invalid_argument("unknown dataset kind '" + spec.kind +
                              "' (expected mnist, cifar10, folder or synth)");
}

// ---------------------------------------------------------------------------
// Protocols

std::string to_string(Protocol p) {
  return p == Protocol::kOneVsRest ? "one_vs_rest" : "rest_vs_one";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "one_vs_rest") return Protocol::kOneVsRest;
  if (s == "rest_vs_one") return Protocol::kRestVsOne;
  throw std::invalid_argument("unknown protocol '" + std::string(s) +
                              "' (expected one_vs_rest or rest_vs_one)");
}

bool ProtocolSplit::is_anomalous(int label) const {
  return std::find(anomalous_labels.begin(), anomalous_labels.end(), label) !=
         anomalous_labels.end();
}

namespace {

std::vector<int> anomalous_set(const LabeledImageSet& set, Protocol protocol, int target) {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(set.class_names.size()); ++c)
    if ((protocol == Protocol::kOneVsRest) == (c == target)) out.push_back(c);
  return out;
}

void materialize(const LabeledImageSet& set, ProtocolSplit& split) {
  split.train = set.subset(split.train_indices);
  split.test = set.subset(split.test_indices);
  split.test_anomaly_flags.clear();
  for (int l : split.test.labels) split.test_anomaly_flags.push_back(split.is_anomalous(l));
  for (int l : split.train.labels)
    if (split.is_anomalous(l))
      throw std::logic_error("protocol split places an anomalous image in train");
}

}  // namespace

ProtocolSplit build_protocol(const LabeledImageSet& set, Protocol protocol,
                             std::string_view target_class, double split_ratio,
                             std::uint64_t seed) {
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw std::invalid_argument("split_ratio must be in (0, 1)");
  const int target = set.class_index(target_class);
  ProtocolSplit split;
  split.protocol = protocol;
  split.target_class = std::string(target_class);
  split.split_ratio = split_ratio;
  split.seed = seed;
  split.anomalous_labels = anomalous_set(set, protocol, target);

  std::vector<std::vector<std::size_t>> by_class(set.class_names.size());
  for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(i);
  if (by_class[target].empty())
    throw std::invalid_argument("target class '" + split.target_class + "' has no images");

  Rng rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (split.is_anomalous(static_cast<int>(c))) {
      split.test_indices.insert(split.test_indices.end(), idx.begin(), idx.end());
      continue;
    }
    if (idx.empty()) continue;
    if (idx.size() < 2)
      throw std::invalid_argument("class '" + set.class_names[c] + "' has " +
                                  std::to_string(idx.size()) + " image(s); cannot split");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<long long>(idx.size());
    const auto n_train = std::clamp<long long>(std::llround(split_ratio * n), 1, n - 1);
    split.train_indices.insert(split.train_indices.end(), idx.begin(), idx.begin() + n_train);
    split.test_indices.insert(split.test_indices.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  materialize(set, split);
  return split;
}

namespace {

std::string index_list(const std::vector<std::size_t>& idx) {
  std::string s;
  s.reserve(idx.size() * 6);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(idx[i]);
  }
  return s;
}

std::vector<std::size_t> parse_index_list(const std::string& s, std::string_view what) {
  std::vector<std::size_t> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split(s, ','))
    out.push_back(static_cast<std::size_t>(parse_uint(part, what)));
  return out;
}

}  // namespace

std::string manifest_text(const ProtocolSplit& split, const DatasetSpec& dataset,
                          const std::vector<std::string>& class_names) {
  for (const auto& c : class_names)
    if (c.find_first_of(",\n") != std::string::npos)
      throw std::invalid_argument("class name '" + c + "' cannot be written to a manifest");
  KeyValues kv = dataset.to_key_values();
  kv["format"] = "alcn-manifest-1";
  kv["class_names"] = join(class_names, ',');
  kv["protocol.mode"] = to_string(split.protocol);
  kv["protocol.target"] = split.target_class;
  kv["protocol.split_ratio"] = format_double(split.split_ratio);
  kv["protocol.seed"] = std::to_string(split.seed);
  kv["split.train"] = index_list(split.train_indices);
  kv["split.test"] = index_list(split.test_indices);
  return format_key_values(kv, "ALCN protocol manifest");
}

void write_manifest(const fs::path& path, const ProtocolSplit& split, const DatasetSpec& dataset,
                    const std::vector<std::string>& class_names) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, manifest_text(split, dataset, class_names));
}

ProtocolManifest parse_manifest(std::string_view text, std::string_view source) {
  const KeyValues kv = parse_key_values(text, source);
  const auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end())
      throw std::runtime_error(std::string(source) + ": manifest is missing '" + k + "'");
    return it->second;
  };
  if (need("format") != "alcn-manifest-1")
    throw std::runtime_error(std::string(source) + ": unsupported manifest format '" +
                             need("format") + "'");
  ProtocolManifest m;
  m.dataset = DatasetSpec::from_key_values(kv);
  m.protocol = parse_protocol(need("protocol.mode"));
  m.target_class = need("protocol.target");
  m.split_ratio = parse_double(need("protocol.split_ratio"), "protocol.split_ratio");
  m.seed = parse_uint(need("protocol.seed"), "protocol.seed");
  m.class_names = split(need("class_names"), ',');
  m.train_indices = parse_index_list(need("split.train"), "split.train");
  m.test_indices = parse_index_list(need("split.test"), "split.test");
  return m;
}

ProtocolManifest read_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.string());
}

ProtocolSplit apply_manifest(const LabeledImageSet& set, const ProtocolManifest& m) {
  if (m.class_names != set.class_names)
    throw std::invalid_argument("manifest class names do not match the dataset");
  for (auto i : m.train_indices)
    if (i >= set.size()) throw std::invalid_argument("manifest train index out of range");
  for (auto i : m.test_indices)
    if (i >= set.size()) throw std::invalid_argument("manifest test index out of range");
  ProtocolSplit split;
  split.protocol = m.protocol;
  split.target_class = m.target_class;
  split.split_ratio = m.split_ratio;
  split.seed = m.seed;
  split.anomalous_labels = anomalous_set(set, m.protocol, set.class_index(m.target_class));
  split.train_indices = m.train_indices;
  split.test_indices = m.test_indices;
  materialize(set, split);
  return split;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan) {
  if (plan.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (plan.batch_size > n)
    throw std::invalid_argument("batch_size " + std::to_string(plan.batch_size) +
                                " exceeds training set size " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (plan.shuffle) {
    Rng rng(plan.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t end = std::min(n, start + plan.batch_size);
    if (plan.drop_last && end - start < plan.batch_size) break;
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::vector<Tensor<float>> make_batches(const LabeledImageSet& train, const BatchPlan& plan) {
  std::vector<Tensor<float>> out;
  for (const auto& idx : batch_indices(train.size(), plan)) out.push_back(gather(train.images, idx));
  return out;
}

}  // namespace alcn
