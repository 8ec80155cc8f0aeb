#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "alcn/data.hpp"
#include "fixtures.hpp"

using namespace alcn;
namespace fs = std::filesystem;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::string idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                       unsigned char fill) {
  std::string s;
  put_be32(s, magic);
  put_be32(s, n);
  put_be32(s, rows);
  put_be32(s, cols);
  s.append(static_cast<std::size_t>(n) * rows * cols, static_cast<char>(fill));
  return s;
}

std::string idx_labels(std::uint32_t magic, const std::vector<unsigned char>& labels) {
  std::string s;
  put_be32(s, magic);
  put_be32(s, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) s.push_back(static_cast<char>(l));
  return s;
}

void write_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

void write_gz(const fs::path& p, const std::string& bytes) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

/// classes x per_class images; pixel value encodes the index.
LabeledImageSet grid_set(int classes, int per_class) {
  LabeledImageSet s;
  for (int c = 0; c < classes; ++c) s.class_names.push_back(std::to_string(c));
  const std::size_t n = static_cast<std::size_t>(classes) * per_class;
  s.images = Tensor<float>({n, 1, 2, 2});
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>(i % classes));
    for (int k = 0; k < 4; ++k) s.images[i * 4 + k] = static_cast<float>(i) / static_cast<float>(n);
  }
  return s;
}

void check_split_invariants(const LabeledImageSet& set, const ProtocolSplit& s) {
  for (int l : s.train.labels) REQUIRE_FALSE(s.is_anomalous(l));
  REQUIRE(s.test_anomaly_flags.size() == s.test.size());
  for (std::size_t i = 0; i < s.test.size(); ++i)
    REQUIRE(s.test_anomaly_flags[i] == s.is_anomalous(s.test.labels[i]));
  std::vector<std::size_t> all = s.train_indices;
  all.insert(all.end(), s.test_indices.begin(), s.test_indices.end());
  std::sort(all.begin(), all.end());
  REQUIRE(all.size() == set.size());
  for (std::size_t i = 0; i < all.size(); ++i) REQUIRE(all[i] == i);
  // Per normal class the train share is within one image of the ratio.
  for (int c = 0; c < static_cast<int>(set.class_names.size()); ++c) {
    if (s.is_anomalous(c)) continue;
    const auto tr = std::count(s.train.labels.begin(), s.train.labels.end(), c);
    const auto te = std::count(s.test.labels.begin(), s.test.labels.end(), c);
    REQUIRE(std::abs(static_cast<double>(tr) - s.split_ratio * static_cast<double>(tr + te)) <= 1.0);
  }
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("IDX files load plain and gzipped") {
    const auto dir = fixture::temp_dir("idx");
    write_raw(dir / "a-images-idx3-ubyte", idx_images(0x803, 3, 28, 28, 255));
    write_raw(dir / "a-labels-idx1-ubyte", idx_labels(0x801, {7, 1, 0}));
    write_gz(dir / "b-images-idx3-ubyte.gz", idx_images(0x803, 2, 28, 28, 51));
    write_gz(dir / "b-labels-idx1-ubyte.gz", idx_labels(0x801, {3, 3}));

    const auto a = load_mnist_idx(dir / "a-images-idx3-ubyte", dir / "a-labels-idx1-ubyte");
    CHECK(a.images.shape() == Shape{3, 1, 28, 28});
    CHECK(a.images[0] == 1.0f);
    CHECK(a.labels == std::vector<int>{7, 1, 0});
    CHECK(a.class_names.size() == 10);

    const auto all = load_mnist_dir(dir);
    CHECK(all.size() == 5);
    CHECK(all.labels == std::vector<int>{7, 1, 0, 3, 3});
    CHECK(all.images[4 * 784] == doctest::Approx(0.2f));
    CHECK_NOTHROW(all.validate());
  }

  TEST_CASE("IDX format errors name the header field") {
    const auto dir = fixture::temp_dir("idx-bad");
    write_raw(dir / "img", idx_images(0x801, 1, 28, 28, 0));
    write_raw(dir / "lab", idx_labels(0x801, {1}));
    try {
      load_mnist_idx(dir / "img", dir / "lab");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.field() == "images magic");
    }
    write_raw(dir / "img", idx_images(0x803, 2, 28, 28, 0));
    try {
      load_mnist_idx(dir / "img", dir / "lab");
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.field() == "labels count");
    }
    write_raw(dir / "lab", idx_labels(0x803, {1, 2}));
    CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "lab"), FormatError);
    std::string shortened = idx_images(0x803, 2, 28, 28, 0);
    shortened.resize(shortened.size() - 10);
    write_raw(dir / "img", shortened);
    write_raw(dir / "lab", idx_labels(0x801, {1, 2}));
    CHECK_THROWS_AS(load_mnist_idx(dir / "img", dir / "lab"), FormatError);
    CHECK_THROWS(load_mnist_idx(dir / "nope", dir / "lab"));
  }

  TEST_CASE("bundled MNIST subset header") {
    const auto set = load_mnist_dir(ALCN_TEST_MNIST_DIR);
    CHECK(set.images.shape() == Shape{10000, 1, 28, 28});
    CHECK(set.class_names.size() == 10);
    float lo = 1.0f, hi = 0.0f;
    for (float v : set.images.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
  }

  TEST_CASE("CIFAR-10 binary batches") {
    const auto dir = fixture::temp_dir("cifar");
    std::string rec(3073, '\0');
    rec[0] = 4;
    rec[1] = static_cast<char>(255);
    for (const char* f : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                          "data_batch_5.bin"})
      write_raw(dir / f, rec + rec);
    std::string warned;
    set_warning_sink([&](std::string_view m) { warned = m; });
    write_raw(dir / "test_batch.bin", "");
    const auto set = load_cifar10_binary(dir);
    set_warning_sink({});
    CHECK(set.images.shape() == Shape{10, 3, 32, 32});
    CHECK(set.labels[0] == 4);
    CHECK(set.class_names[4] == "deer");
    CHECK(set.images[0] == 1.0f);
    CHECK(warned.find("empty") != std::string::npos);

    write_raw(dir / "test_batch.bin", rec.substr(0, 100));
    try {
      load_cifar10_binary(dir);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("byte offset 0") != std::string::npos);
    }
  }

  TEST_CASE("image folders follow the category/split/condition layout") {
    const auto root = fixture::temp_dir("folder");
    fs::create_directories(root / "bottle" / "train" / "good");
    fs::create_directories(root / "bottle" / "test" / "good");
    fs::create_directories(root / "bottle" / "test" / "crack");
    cv::Mat big(512, 512, CV_8UC3, cv::Scalar(10, 128, 250));
    cv::imwrite((root / "bottle" / "train" / "good" / "000.png").string(), big);
    cv::imwrite((root / "bottle" / "test" / "good" / "000.png").string(), big);
    cv::imwrite((root / "bottle" / "test" / "crack" / "000.jpg").string(), cv::Mat(64, 64, CV_8UC3, cv::Scalar(0)));

    FolderLayout layout;
    layout.resolution = 256;
    const auto set = load_image_folder(root, layout);
    CHECK(set.images.shape() == Shape{3, 3, 256, 256});
    CHECK(set.class_names == std::vector<std::string>{"good", "crack"});
    CHECK(std::count(set.labels.begin(), set.labels.end(), 0) == 2);
    CHECK_NOTHROW(set.validate());

    layout.channels = 1;
    layout.resolution = 16;
    layout.category = "bottle";
    CHECK(load_image_folder(root, layout).images.shape() == Shape{3, 1, 16, 16});
    CHECK(load_image_file(root / "bottle" / "train" / "good" / "000.png", 3, 8).shape() == Shape{3, 8, 8});

    CHECK_THROWS(load_image_folder(root / "missing", layout));
    fs::create_directories(root / "empty" / "train" / "good");
    layout.category = "empty";
    CHECK_THROWS(load_image_folder(root, layout));
    write_raw(root / "bottle" / "test" / "crack" / "001.png", "not an image");
    layout.category = "bottle";
    try {
      load_image_folder(root, layout);
      FAIL("expected a decode error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("001.png") != std::string::npos);
    }
  }

  TEST_CASE("synthetic shapes") {
    const auto a = synth_dataset(2, 5, 28, 1);
    CHECK(a.images.shape() == Shape{10, 1, 28, 28});
    CHECK(synth_dataset(2, 5, 28, 1).images == a.images);
    CHECK_NOTHROW(a.validate());
    const auto s = synth_dataset(4, 20, 28, 3);
    std::vector<std::vector<double>> means(4, std::vector<double>(784, 0.0));
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t k = 0; k < 784; ++k) means[s.labels[i]][k] += s.images[i * 784 + k] / 20.0;
    for (int c = 0; c < 4; ++c)
      for (int d = c + 1; d < 4; ++d) {
        double dist = 0.0;
        for (std::size_t k = 0; k < 784; ++k) dist += (means[c][k] - means[d][k]) * (means[c][k] - means[d][k]);
        CHECK(dist > 0.0);
      }
    CHECK_THROWS_AS(synth_dataset(kSynthPrimitives + 1, 2, 28, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_dataset(2, 0, 28, 1), std::invalid_argument);
  }

  TEST_CASE("protocol split arithmetic") {
    const auto set = grid_set(10, 10);
    const auto p1 = build_protocol(set, Protocol::kOneVsRest, "3", 0.8, 7);
    CHECK(p1.train.size() == 72);
    CHECK(std::count(p1.train.labels.begin(), p1.train.labels.end(), 3) == 0);
    CHECK(std::count(p1.test_anomaly_flags.begin(), p1.test_anomaly_flags.end(), true) == 10);
    CHECK(p1.test.size() == 28);

    const auto p2 = build_protocol(set, Protocol::kRestVsOne, "3", 0.8, 7);
    CHECK(p2.train.size() == 8);
    for (int l : p2.train.labels) CHECK(l == 3);
    CHECK(std::count(p2.test_anomaly_flags.begin(), p2.test_anomaly_flags.end(), true) == 90);
    CHECK(p2.test.size() == 92);

    CHECK(build_protocol(set, Protocol::kOneVsRest, "3", 0.8, 7).train_indices == p1.train_indices);
    CHECK_THROWS_AS(build_protocol(set, Protocol::kOneVsRest, "dog", 0.8, 7), std::invalid_argument);
    CHECK_THROWS_AS(build_protocol(set, Protocol::kOneVsRest, "3", 1.0, 7), std::invalid_argument);
    CHECK_THROWS_AS(build_protocol(grid_set(3, 1), Protocol::kOneVsRest, "0", 0.8, 7),
                    std::invalid_argument);
  }

  TEST_CASE("protocol invariants over random configurations") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const int classes = 2 + static_cast<int>(rng() % 6);
      const int per = 2 + static_cast<int>(rng() % 15);
      const auto set = grid_set(classes, per);
      const std::string target = std::to_string(rng() % classes);
      const double ratio = 0.1 + 0.8 * static_cast<double>(rng() % 1000) / 1000.0;
      const auto a = build_protocol(set, Protocol::kOneVsRest, target, ratio, rng());
      const auto b = build_protocol(set, Protocol::kRestVsOne, target, ratio, rng());
      check_split_invariants(set, a);
      check_split_invariants(set, b);
      for (int c = 0; c < classes; ++c) REQUIRE(a.is_anomalous(c) != b.is_anomalous(c));
    }
  }

  TEST_CASE("manifest round trip") {
    const auto dir = fixture::temp_dir("manifest");
    DatasetSpec spec;
    spec.kind = "synth";
    spec.synth_classes = 3;
    spec.synth_per_class = 12;
    const auto set = load_dataset(spec);
    const auto split = build_protocol(set, Protocol::kRestVsOne, set.class_names[1], 0.75, 5);
    write_manifest(dir / "m.txt", split, spec, set.class_names);
    const std::string first = read_file(dir / "m.txt");
    write_manifest(dir / "m.txt", split, spec, set.class_names);
    CHECK(read_file(dir / "m.txt") == first);

    const auto m = read_manifest(dir / "m.txt");
    CHECK(m.dataset == spec);
    CHECK(m.protocol == Protocol::kRestVsOne);
    CHECK(m.target_class == set.class_names[1]);
    CHECK(m.seed == 5);
    const auto again = apply_manifest(set, m);
    CHECK(again.train_indices == split.train_indices);
    CHECK(again.test_indices == split.test_indices);
    CHECK(again.test_anomaly_flags == split.test_anomaly_flags);
    CHECK(again.train.images == split.train.images);

    CHECK_THROWS(parse_manifest("format = other\n"));
    auto wrong = m;
    wrong.class_names.push_back("extra");
    CHECK_THROWS_AS(apply_manifest(set, wrong), std::invalid_argument);
  }

  TEST_CASE("batch plans") {
    BatchPlan plan;
    plan.batch_size = 4;
    plan.shuffle = false;
    auto b = batch_indices(10, plan);
    REQUIRE(b.size() == 3);
    CHECK(b[0] == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(b[2].size() == 2);
    plan.drop_last = true;
    CHECK(batch_indices(10, plan).size() == 2);
    plan.drop_last = false;
    plan.shuffle = true;
    plan.seed = 3;
    CHECK(batch_indices(10, plan) == batch_indices(10, plan));
    std::set<std::size_t> seen;
    for (const auto& batch : batch_indices(10, plan)) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 10);
    plan.batch_size = 0;
    CHECK_THROWS_AS(batch_indices(10, plan), std::invalid_argument);
    plan.batch_size = 11;
    CHECK_THROWS_AS(batch_indices(10, plan), std::invalid_argument);

    const auto set = synth_dataset(2, 5, 8, 1);
    plan.batch_size = 4;
    plan.shuffle = false;
    const auto batches = make_batches(set, plan);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].shape() == Shape{4, 1, 8, 8});
    CHECK(batches[2].shape() == Shape{2, 1, 8, 8});
    CHECK(batches[1][0] == set.images[4 * 64]);
  }
}
