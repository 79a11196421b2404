#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "weakenlab/cli/config.hpp"

namespace weakenlab::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct CommandOptions {
  std::filesystem::path config_path;
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;  // replaces the seed list
  std::optional<std::size_t> threads;
  // sweep
  std::optional<std::string> level;
  std::vector<double> ws_list;
  // eval
  std::filesystem::path checkpoint;
  std::string split = "val";
  // Progress and error messages. Null silences them.
  std::ostream* log = nullptr;
  std::ostream* out = nullptr;  // results printed by eval
};

struct DatasetPair {
  Dataset train;
  Dataset val;
};

// Root directory: config value, else $WEAKENLAB_DATA_DIR.
std::filesystem::path resolve_data_root(const DatasetConfig& cfg);
// Loads, subsamples and normalizes both splits. normalize=false keeps raw [0, 1] pixels.
DatasetPair load_datasets(const DatasetConfig& cfg, bool normalize = true);

// Config with command-line overrides applied and the data root made absolute.
ExperimentConfig resolve_config(const CommandOptions& opts);

std::filesystem::path run_dir(const std::filesystem::path& out, const std::string& method, std::uint64_t seed);

// Runs tasks on up to `threads` workers; the first exception is rethrown.
void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t threads);

// Each returns an exit code and never throws.
int cmd_train(const CommandOptions& opts);
int cmd_sweep(const CommandOptions& opts);
int cmd_attack(const CommandOptions& opts);
int cmd_eval(const CommandOptions& opts);
int cmd_weaken_preview(const CommandOptions& opts);

// Binary P5 graymap of an [H, W] slice with values in [0, 1].
void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width);

}  // namespace weakenlab::cli
