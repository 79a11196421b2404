#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "weakenlab/train.hpp"

namespace weakenlab {

// Shortest text that parses back to the same double.
std::string format_number(double v);

std::string metrics_csv(std::span<const MetricsRecord> records);
std::string metrics_json(std::span<const MetricsRecord> records);

struct RobustnessRow {
  std::string method;
  std::string attack;
  std::string mode;  // white | black
  double epsilon = 0.0;
  double accuracy = 0.0;
};

std::string robustness_csv(std::span<const RobustnessRow> rows);

struct SweepRow {
  std::string level;  // embedding | hidden
  double ws = 0.0;
  std::uint64_t seed = 0;
  double best_top1 = 0.0;
};

std::string sweep_csv(std::span<const SweepRow> rows);

// Writes text to path, creating parent directories. Throws on I/O failure.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace weakenlab
