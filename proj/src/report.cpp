#include "weakenlab/report.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace weakenlab {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::string out = "epoch,train_loss,val_top1,val_top5,lr,wall_ms\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + ',' + format_number(r.train_loss) + ',' + format_number(r.val_top1) + ',' +
           format_number(r.val_top5) + ',' + format_number(r.lr) + ',' + format_number(r.wall_ms) + '\n';
  }
  return out;
}

std::string metrics_json(std::span<const MetricsRecord> records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    arr.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"val_top1", r.val_top1},
                   {"val_top5", r.val_top5},
                   {"lr", r.lr},
                   {"wall_ms", r.wall_ms}});
  }
  return arr.dump(2) + "\n";
}

std::string robustness_csv(std::span<const RobustnessRow> rows) {
  std::string out = "method,attack,mode,epsilon,accuracy\n";
  for (const auto& r : rows) {
    out += r.method + ',' + r.attack + ',' + r.mode + ',' + format_number(r.epsilon) + ',' +
           format_number(r.accuracy) + '\n';
  }
  return out;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "level,ws,seed,best_top1\n";
  for (const auto& r : rows) {
    out += r.level + ',' + format_number(r.ws) + ',' + std::to_string(r.seed) + ',' + format_number(r.best_top1) +
           '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace weakenlab
