#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "alcn/tensor.hpp"
#include "alcn/util.hpp"

namespace alcn {

/// Malformed dataset file. field() names the offending header field or location.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Images in (N, C, H, W) layout with values in [0, 1]; labels index class_names.
struct LabeledImageSet {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.rank() == 4 ? images.dim(1) : 0; }
  std::size_t resolution() const { return images.rank() == 4 ? images.dim(2) : 0; }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  /// Images and labels at the given indices, in that order.
  LabeledImageSet subset(std::span<const std::size_t> indices) const;
  /// Index of a class by name.
  int class_index(std::string_view name) const;
};

/// Copies the samples at `indices` out of an (N, ...) tensor.
Tensor<float> gather(const Tensor<float>& images, std::span<const std::size_t> indices);

/// IDX image/label pair (plain or gzip-compressed). Pixels are scaled by 1/255.
LabeledImageSet load_mnist_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path);

/// Every `*images-idx3-ubyte[.gz]` / `*labels-idx1-ubyte[.gz]` pair in a
/// directory, concatenated in file-name order (canonical train + t10k merge).
LabeledImageSet load_mnist_dir(const std::filesystem::path& dir);

/// CIFAR-10 binary batches data_batch_1..5.bin then test_batch.bin.
LabeledImageSet load_cifar10_binary(const std::filesystem::path& dir);

/// `root/<category>/<split>/<condition>/*.png|jpg` (MVTEC-AD layout). Labels are
/// condition directory names; `good` is the normal condition.
struct FolderLayout {
  int resolution = 256;
  int channels = 3;
  std::string category;                      // empty: every category under root
  std::vector<std::string> splits{"train", "test"};
};
LabeledImageSet load_image_folder(const std::filesystem::path& root, const FolderLayout& layout);

/// One image file as (C, resolution, resolution), converted and resized like
/// the folder loader does.
Tensor<float> load_image_file(const std::filesystem::path& path, int channels, int resolution);

/// Procedural per-class shapes (disk, square, cross, ...) with jittered
/// position, size and intensity. Single channel.
LabeledImageSet synth_dataset(int num_classes, int per_class, int resolution, std::uint64_t seed);
inline constexpr int kSynthPrimitives = 8;

/// Where a dataset comes from; recorded in manifests and configs.
struct DatasetSpec {
  std::string kind = "synth";  // mnist | cifar10 | folder | synth
  std::string path;            // mnist dir, cifar dir, or folder root
  std::string category;        // folder datasets
  int resolution = 0;          // folder: resize target (0 = 256); synth: image size (0 = 28)
  int channels = 0;            // folder: 1 or 3 (0 = 3)
  int synth_classes = 4;
  int synth_per_class = 64;
  std::uint64_t synth_seed = 1;

  KeyValues to_key_values() const;  // keys prefixed with "dataset."
  static DatasetSpec from_key_values(const KeyValues& kv);
  std::string identifier() const;
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

LabeledImageSet load_dataset(const DatasetSpec& spec);

enum class Protocol { kOneVsRest, kRestVsOne };
std::string to_string(Protocol p);
Protocol parse_protocol(std::string_view s);

/// Leave-one-out split. one_vs_rest: the target class is anomalous;
/// rest_vs_one: the target class is the only normal class.
struct ProtocolSplit {
  Protocol protocol = Protocol::kOneVsRest;
  std::string target_class;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  std::vector<int> anomalous_labels;
  std::vector<std::size_t> train_indices;  // into the source set, ascending
  std::vector<std::size_t> test_indices;   // into the source set, ascending
  LabeledImageSet train;
  LabeledImageSet test;
  std::vector<bool> test_anomaly_flags;

  bool is_anomalous(int label) const;
};

/// Normal classes are each shuffled with `seed` and split at split_ratio into
/// train and test; every anomalous image goes to test.
ProtocolSplit build_protocol(const LabeledImageSet& set, Protocol protocol,
                             std::string_view target_class, double split_ratio,
                             std::uint64_t seed);

/// Manifest text: dataset keys, protocol fields and explicit index lists.
std::string manifest_text(const ProtocolSplit& split, const DatasetSpec& dataset,
                          const std::vector<std::string>& class_names);
void write_manifest(const std::filesystem::path& path, const ProtocolSplit& split,
                    const DatasetSpec& dataset, const std::vector<std::string>& class_names);

struct ProtocolManifest {
  DatasetSpec dataset;
  Protocol protocol = Protocol::kOneVsRest;
  std::string target_class;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};
ProtocolManifest parse_manifest(std::string_view text, std::string_view source = "<manifest>");
ProtocolManifest read_manifest(const std::filesystem::path& path);

/// Rebuilds the split recorded in a manifest against the loaded dataset.
ProtocolSplit apply_manifest(const LabeledImageSet& set, const ProtocolManifest& manifest);

struct BatchPlan {
  std::size_t batch_size = 128;
  bool shuffle = true;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

/// Index batches over [0, n). Throws when batch_size is 0 or exceeds n.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan);
std::vector<Tensor<float>> make_batches(const LabeledImageSet& train, const BatchPlan& plan);

}  // namespace alcn
