#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "weakenlab/augment.hpp"
#include "weakenlab/tensor.hpp"

namespace weakenlab {

struct Normalization {
  std::vector<double> mean;  // per channel; empty means identity
  std::vector<double> std;
};

/// Immutable labelled sample set. inputs are [N, C, H, W] for images or
/// [N, D] for vectors.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t class_count = 0;
  Normalization normalization;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  void validate() const;
};

/// IDX ingestion failures. kind distinguishes the three contract errors.
class IdxError : public std::runtime_error {
 public:
  enum class Kind { format, consistency, length, io };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Big-endian MNIST layout; pixels mapped to [0, 1] by /255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t class_count = 10);
// Inverse of load_idx for unnormalized [N,1,H,W] data on the k/255 grid.
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// (x - mean) / std per channel (axis 1). mean/std have one entry or one per channel.
Dataset normalize(const Dataset& ds, const std::vector<double>& mean, const std::vector<double>& std);
Dataset denormalize(const Dataset& ds);

// Rows `indices` in the given order.
Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices);

// Seeded draw of n samples without replacement; every class keeps its
// proportional share within one sample. Output order is shuffled.
Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed);

// Every input multiplied by `factor`.
Dataset scale_inputs(const Dataset& ds, double factor);

/// Seeded shuffle then contiguous chunks; the last partial chunk is kept.
/// Without a seed the dataset order is used.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator batches(const Dataset& ds, std::size_t batch_size,
                      std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t dims = 3;
  std::size_t samples_per_class = 100;
  double mean_scale = 3.0;
  double noise_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// K isotropic Gaussian clusters with N(0, mean_scale^2) centers; [N, D] inputs
// grouped by class.
Dataset synthetic_blobs(const SyntheticSpec& spec);

// Rows x,y,z,label,kind with an original row followed by its weakened row.
void export_scatter(const Dataset& ds, const Dataset& weakened, std::array<std::size_t, 3> dims,
                    const std::filesystem::path& path);

}  // namespace weakenlab
