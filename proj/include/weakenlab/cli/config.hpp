#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "weakenlab/adversarial.hpp"
#include "weakenlab/augment.hpp"
#include "weakenlab/data.hpp"
#include "weakenlab/models.hpp"
#include "weakenlab/train.hpp"

namespace weakenlab::cli {

/// Invalid configuration. The message starts with the dotted field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string kind = "idx";  // idx | synthetic
  // Directory holding the IDX files. Empty means $WEAKENLAB_DATA_DIR.
  std::string root;
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string val_images = "val-images-idx3-ubyte";
  std::string val_labels = "val-labels-idx1-ubyte";
  std::size_t class_count = 10;
  std::size_t train_subset = 0;  // 0 keeps every sample
  std::size_t val_subset = 0;
  std::uint64_t subset_seed = 0;
  Normalization normalization;

  SyntheticSpec synthetic;
  std::size_t val_samples_per_class = 50;
};

struct MethodConfig {
  std::string name = "baseline";
  AugmentSpec augment;
};

struct AttackConfig {
  std::vector<AttackKind> kinds{AttackKind::fgsm, AttackKind::ifgsm};
  double epsilon = 0.1;  // raw pixel units, before normalization
  std::size_t iterations = 10;
  std::string source_method = "baseline";
  // Output directory of a previous train run. Empty means the --out directory.
  std::string checkpoint_dir;
};

struct SweepConfig {
  std::vector<std::string> levels{"hidden", "embedding"};
  std::vector<double> ws{0.1, 0.5, 0.8, 0.9};
};

struct PreviewConfig {
  std::vector<double> ws{0.2, 0.5, 0.8, 0.99};
  std::size_t count = 8;
  // Scatter dimensions. Unset picks the three highest-variance dimensions.
  std::optional<std::array<std::size_t, 3>> dims;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  ModelSpec model;
  TrainConfig train;  // seed and augment are filled per run
  std::vector<MethodConfig> methods;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t threads = 1;
  AttackConfig attack;
  SweepConfig sweep;
  PreviewConfig preview;

  static ExperimentConfig defaults();
  // Cross-field checks; throws ConfigError.
  void validate() const;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Fully resolved config as JSON; parse_config() of the result gives back the
// same config. `manifest_extra` is an optional JSON object stored under the
// "manifest" key, which the parser skips.
std::string config_to_json(const ExperimentConfig& cfg, std::string_view manifest_extra = {});

// Run configuration for one (method, seed) pair.
TrainConfig run_config(const ExperimentConfig& cfg, const MethodConfig& method, std::uint64_t seed);
ModelSpec run_model_spec(const ExperimentConfig& cfg, std::uint64_t seed);

AugmentSpec parse_augment(std::string_view json_text);
std::string augment_to_json(const AugmentSpec& spec);

}  // namespace weakenlab::cli
