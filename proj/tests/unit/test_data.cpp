#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "weakenlab/augment.hpp"
#include "weakenlab/data.hpp"
#include "weakenlab/models.hpp"
#include "weakenlab/train.hpp"

using namespace weakenlab;
using weakenlab::testing::elem;
using weakenlab::testing::to_vector;

namespace fs = std::filesystem;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>(v >> 16));
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v));
}

struct Fixture {
  std::string images, labels;
};

// Two 28x28 images written byte by byte, independent of write_idx.
Fixture two_image_fixture() {
  Fixture f;
  put_be32(f.images, 0x00000803);
  put_be32(f.images, 2);
  put_be32(f.images, 28);
  put_be32(f.images, 28);
  for (int i = 0; i < 2 * 28 * 28; ++i) f.images.push_back(static_cast<char>(i % 256));
  put_be32(f.labels, 0x00000801);
  put_be32(f.labels, 2);
  f.labels.push_back(7);
  f.labels.push_back(3);
  return f;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("weakenlab_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             std::to_string(counter++) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

IdxError::Kind load_error_kind(const TempDir& dir, const Fixture& f) {
  write_bytes(dir / "img", f.images);
  write_bytes(dir / "lbl", f.labels);
  try {
    load_idx(dir / "img", dir / "lbl");
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load_idx accepted a malformed fixture";
  return IdxError::Kind::io;
}

Dataset labelled(Shape shape, std::vector<double> values, std::vector<int> labels, std::size_t k) {
  Dataset ds;
  ds.inputs = Tensor(std::move(shape), std::move(values));
  ds.labels = std::move(labels);
  ds.class_count = k;
  return ds;
}

Dataset imbalanced(std::size_t n_per_class0, std::size_t n_per_class1, std::size_t n_per_class2) {
  std::vector<int> labels;
  for (std::size_t i = 0; i < n_per_class0; ++i) labels.push_back(0);
  for (std::size_t i = 0; i < n_per_class1; ++i) labels.push_back(1);
  for (std::size_t i = 0; i < n_per_class2; ++i) labels.push_back(2);
  std::vector<double> values(labels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i);
  return labelled({labels.size(), 1}, std::move(values), labels, 3);
}

}  // namespace

TEST(LoadIdx, ParsesHandBuiltFixture) {
  TempDir dir;
  const Fixture f = two_image_fixture();
  write_bytes(dir / "img", f.images);
  write_bytes(dir / "lbl", f.labels);
  const Dataset ds = load_idx(dir / "img", dir / "lbl");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.inputs.shape(), (Shape{2, 1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 3}));
  EXPECT_EQ(ds.class_count, 10u);
  const auto v = ds.inputs.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v[i], static_cast<double>(i % 256) / 255.0);
    EXPECT_GE(v[i], 0.0);
    EXPECT_LE(v[i], 1.0);
  }
  EXPECT_EQ(v[255], 1.0);
  EXPECT_EQ(v[0], 0.0);
}

TEST(LoadIdx, WrongMagicIsFormatError) {
  TempDir dir;
  Fixture f = two_image_fixture();
  f.images[3] = 0x02;
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::format);
  f = two_image_fixture();
  f.labels[3] = 0x03;
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::format);
}

TEST(LoadIdx, CountMismatchIsConsistencyError) {
  TempDir dir;
  Fixture f = two_image_fixture();
  f.labels = {};
  put_be32(f.labels, 0x00000801);
  put_be32(f.labels, 3);
  f.labels += std::string("\x01\x02\x03", 3);
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::consistency);
}

TEST(LoadIdx, TruncatedFileIsLengthError) {
  TempDir dir;
  Fixture f = two_image_fixture();
  f.images.pop_back();
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::length);
  f = two_image_fixture();
  f.labels.pop_back();
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::length);
  f = two_image_fixture();
  f.images.resize(10);
  EXPECT_EQ(load_error_kind(dir, f), IdxError::Kind::length);
}

TEST(LoadIdx, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(load_idx(dir / "nope", dir / "nope2"), IdxError);
}

TEST(WriteIdx, RoundTripReproducesBytesExactly) {
  TempDir dir;
  const Fixture f = two_image_fixture();
  write_bytes(dir / "img", f.images);
  write_bytes(dir / "lbl", f.labels);
  const Dataset ds = load_idx(dir / "img", dir / "lbl");
  write_idx(ds, dir / "img2", dir / "lbl2");
  EXPECT_EQ(read_bytes(dir / "img2"), f.images);
  EXPECT_EQ(read_bytes(dir / "lbl2"), f.labels);
  const Dataset again = load_idx(dir / "img2", dir / "lbl2");
  EXPECT_EQ(to_vector(again.inputs), to_vector(ds.inputs));
  EXPECT_EQ(again.labels, ds.labels);
}

TEST(WriteIdx, RejectsOffGridOrNormalizedData) {
  TempDir dir;
  Dataset ds = labelled({1, 1, 2, 2}, {0.0, 0.5, 1.0, 0.0}, {1}, 10);
  EXPECT_THROW(write_idx(ds, dir / "a", dir / "b"), std::invalid_argument);
  ds = labelled({1, 1, 2, 2}, {0.0, 1.0, 1.0, 0.0}, {1}, 10);
  EXPECT_THROW(write_idx(normalize(ds, {0.1307}, {0.3081}), dir / "a", dir / "b"), std::invalid_argument);
}

TEST(Normalize, InverseRoundTripWithinTolerance) {
  Rng rng(3);
  std::vector<double> values(5 * 3 * 4 * 4);
  for (auto& v : values) v = rng.uniform();
  const Dataset ds = labelled({5, 3, 4, 4}, values, {0, 1, 2, 0, 1}, 3);
  const Dataset n = normalize(ds, {0.1, 0.2, 0.3}, {0.5, 0.25, 2.0});
  EXPECT_EQ(elem(n.inputs, {1, 2, 3, 0}), (elem(ds.inputs, {1, 2, 3, 0}) - 0.3) / 2.0);
  EXPECT_EQ(elem(n.inputs, {4, 0, 0, 1}), (elem(ds.inputs, {4, 0, 0, 1}) - 0.1) / 0.5);
  const Dataset back = denormalize(n);
  const auto a = ds.inputs.data(), b = back.inputs.data();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_TRUE(back.normalization.mean.empty());
}

TEST(Normalize, SingleEntryBroadcastsAndBadArgumentsRejected) {
  const Dataset ds = labelled({1, 2, 1, 1}, {1.0, 2.0}, {0}, 2);
  const Dataset n = normalize(ds, {1.0}, {2.0});
  EXPECT_EQ(to_vector(n.inputs), (std::vector<double>{0.0, 0.5}));
  EXPECT_THROW(normalize(ds, {0.0}, {0.0}), std::invalid_argument);
  EXPECT_THROW(normalize(ds, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(normalize(n, {0.0}, {1.0}), std::invalid_argument);
}

TEST(Subsample, FullSizeIsPermutation) {
  const Dataset ds = imbalanced(10, 20, 7);
  const Dataset s = subsample(ds, ds.size(), 5);
  ASSERT_EQ(s.size(), ds.size());
  auto v = to_vector(s.inputs);
  std::sort(v.begin(), v.end());
  EXPECT_EQ(v, to_vector(ds.inputs));
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.labels[i], ds.labels[static_cast<std::size_t>(s.inputs.data()[i])]);
  }
}

TEST(Subsample, PreservesClassRatiosWithinOneSample) {
  const Dataset ds = imbalanced(103, 251, 46);
  for (std::size_t n : {1u, 7u, 40u, 123u, 399u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Dataset s = subsample(ds, n, seed);
      ASSERT_EQ(s.size(), n);
      std::map<int, std::size_t> counts;
      for (int l : s.labels) ++counts[l];
      const double total = static_cast<double>(ds.size());
      const std::size_t sizes[3] = {103, 251, 46};
      for (int k = 0; k < 3; ++k) {
        const double ideal = static_cast<double>(n) * static_cast<double>(sizes[k]) / total;
        EXPECT_LE(std::abs(static_cast<double>(counts[k]) - ideal), 1.0) << "n=" << n << " class " << k;
      }
      std::set<double> unique(s.inputs.data().begin(), s.inputs.data().end());
      EXPECT_EQ(unique.size(), n);
    }
  }
}

TEST(Subsample, SeededAndRejectsOversizedRequest) {
  const Dataset ds = imbalanced(30, 30, 30);
  EXPECT_EQ(to_vector(subsample(ds, 20, 9).inputs), to_vector(subsample(ds, 20, 9).inputs));
  EXPECT_NE(to_vector(subsample(ds, 20, 9).inputs), to_vector(subsample(ds, 20, 10).inputs));
  EXPECT_THROW(subsample(ds, 91, 0), std::invalid_argument);
}

TEST(Batches, CoverEverySampleOnceAndKeepPartialBatch) {
  const Dataset ds = imbalanced(10, 9, 4);  // 23 samples
  auto it = batches(ds, 5, 77);
  EXPECT_EQ(it.batch_count(), 5u);
  std::vector<double> seen;
  std::vector<std::size_t> sizes;
  while (auto b = it.next()) {
    sizes.push_back(b->size());
    EXPECT_EQ(b->class_count, 3u);
    for (std::size_t i = 0; i < b->size(); ++i) {
      const double x = b->inputs.data()[i];
      seen.push_back(x);
      const int label = ds.labels[static_cast<std::size_t>(x)];
      for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(elem(b->labels, {i, k}), static_cast<int>(k) == label ? 1.0 : 0.0);
      }
    }
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{5, 5, 5, 5, 3}));
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, to_vector(ds.inputs));
}

TEST(Batches, SameSeedSameSequenceAndUnseededKeepsOrder) {
  const Dataset ds = imbalanced(20, 20, 20);
  EXPECT_EQ(batches(ds, 8, 4).order(), batches(ds, 8, 4).order());
  EXPECT_NE(batches(ds, 8, 4).order(), batches(ds, 8, 5).order());
  auto it = batches(ds, 60);
  const auto b = it.next();
  ASSERT_TRUE(b);
  EXPECT_EQ(to_vector(b->inputs), to_vector(ds.inputs));
  EXPECT_FALSE(it.next());
  EXPECT_THROW(batches(ds, 0), std::invalid_argument);
}

TEST(SyntheticBlobs, ZeroNoisePutsSamplesOnClusterMeans) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.dims = 5;
  spec.samples_per_class = 6;
  spec.noise_std = 0.0;
  spec.seed = 2;
  const Dataset ds = synthetic_blobs(spec);
  EXPECT_EQ(ds.inputs.shape(), (Shape{24, 5}));
  for (std::size_t i = 0; i < 24; ++i) {
    const std::size_t first = (i / 6) * 6;
    EXPECT_EQ(ds.labels[i], static_cast<int>(i / 6));
    for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(elem(ds.inputs, {i, d}), elem(ds.inputs, {first, d}));
  }
  EXPECT_NE(elem(ds.inputs, {0, 0}), elem(ds.inputs, {6, 0}));
}

TEST(SyntheticBlobs, SeededAndValidated) {
  SyntheticSpec spec;
  EXPECT_EQ(to_vector(synthetic_blobs(spec).inputs), to_vector(synthetic_blobs(spec).inputs));
  spec.classes = 1;
  EXPECT_THROW(synthetic_blobs(spec), std::invalid_argument);
  spec = {};
  spec.dims = 1;
  EXPECT_THROW(synthetic_blobs(spec), std::invalid_argument);
}

TEST(SyntheticBlobs, SeparatedClustersAreFitByLinearClassifier) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.dims = 4;
  spec.samples_per_class = 100;
  spec.mean_scale = 10.0;
  spec.noise_std = 0.5;
  spec.seed = 11;
  const Dataset ds = synthetic_blobs(spec);
  // Oracle separation check: nearest-center margin far exceeds the noise.
  double dist2 = 0.0;
  for (std::size_t d = 0; d < 4; ++d) {
    const double diff = elem(ds.inputs, {0, d}) - elem(ds.inputs, {100, d});
    dist2 += diff * diff;
  }
  ASSERT_GT(std::sqrt(dist2), 10.0 * spec.noise_std);

  Model linear(ModelSpec::mlp({4, 2}, 1));
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 20;
  cfg.lr = 0.05;
  cfg.milestones = {};
  cfg.weight_decay = 0.0;
  const auto records = train(linear, ds, ds, cfg);
  EXPECT_EQ(records.back().val_top1, 100.0);
}

TEST(ScatterExport, EmptyDatasetGivesHeaderOnly) {
  TempDir dir;
  const Dataset empty = labelled({0, 3}, {}, {}, 2);
  export_scatter(empty, empty, {0, 1, 2}, dir / "s.csv");
  EXPECT_EQ(read_bytes(dir / "s.csv"), "x,y,z,label,kind\n");
}

TEST(ScatterExport, WeakenedRowsAreScaledAndCollinear) {
  TempDir dir;
  SyntheticSpec spec;
  spec.dims = 5;
  spec.samples_per_class = 10;
  const Dataset ds = synthetic_blobs(spec);
  const double ws = 0.8;
  const Dataset weak = scale_inputs(ds, 1.0 - ws);
  for (std::size_t i = 0; i < ds.inputs.numel(); ++i) {
    EXPECT_EQ(weak.inputs.data()[i], (1.0 - ws) * ds.inputs.data()[i]);
  }
  EXPECT_EQ(weak.labels, ds.labels);
  export_scatter(ds, weak, {4, 0, 2}, dir / "s.csv");

  std::ifstream in(dir / "s.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x,y,z,label,kind");
  std::size_t rows = 0;
  std::string orig_line, weak_line;
  while (std::getline(in, orig_line) && std::getline(in, weak_line)) {
    double o[3], w[3];
    int lo = 0, lw = 0;
    char ko[16] = {}, kw[16] = {};
    ASSERT_EQ(std::sscanf(orig_line.c_str(), "%lf,%lf,%lf,%d,%15s", &o[0], &o[1], &o[2], &lo, ko), 5);
    ASSERT_EQ(std::sscanf(weak_line.c_str(), "%lf,%lf,%lf,%d,%15s", &w[0], &w[1], &w[2], &lw, kw), 5);
    EXPECT_STREQ(ko, "original");
    EXPECT_STREQ(kw, "weakened");
    EXPECT_EQ(lo, lw);
    EXPECT_EQ(lo, ds.labels[rows]);
    EXPECT_EQ(o[0], elem(ds.inputs, {rows, 4}));
    double dot = 0, no = 0, nw = 0;
    for (int d = 0; d < 3; ++d) {
      EXPECT_EQ(w[d], (1.0 - ws) * o[d]);
      dot += o[d] * w[d];
      no += o[d] * o[d];
      nw += w[d] * w[d];
    }
    EXPECT_NEAR(dot / std::sqrt(no * nw), 1.0, 1e-12);
    ++rows;
  }
  EXPECT_EQ(rows, ds.size());
}

TEST(ScatterExport, RejectsBadDimensionsOrMisalignedData) {
  TempDir dir;
  const Dataset ds = synthetic_blobs({});
  EXPECT_THROW(export_scatter(ds, ds, {0, 1, 3}, dir / "s.csv"), std::invalid_argument);
  EXPECT_THROW(export_scatter(ds, select(ds, {0, 1}), {0, 1, 2}, dir / "s.csv"), std::invalid_argument);
}
