#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "weakenlab/cli/commands.hpp"
#include "weakenlab/report.hpp"

using namespace weakenlab;
using namespace weakenlab::cli;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("weakenlab_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small separable synthetic problem; trains in milliseconds.
const char* kSynthetic = R"({
  "name": "tiny",
  "dataset": {"kind": "synthetic",
              "synthetic": {"classes": 3, "dims": 4, "samples_per_class": 40, "seed": 5},
              "val_samples_per_class": 20},
  "train": {"epochs": 4, "batch_size": 16, "lr": 0.05},
  "methods": [
    {"name": "baseline"},
    {"name": "fw_hl", "hidden": [{"type": "feature_weaken", "ws": 0.8}]}
  ],
  "seeds": [0, 1, 2],
  "sweep": {"levels": ["hidden"], "ws": [0.1, 0.5, 0.8, 0.9]}
})";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.json";
  write_text(p, text);
  return p;
}

CommandOptions options(const fs::path& config, const fs::path& out, std::ostream* log = nullptr) {
  CommandOptions o;
  o.config_path = config;
  o.out_dir = out;
  o.log = log;
  return o;
}

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string mnist_root() { return std::string(WEAKENLAB_TEST_DATA_DIR) + "/mnist-subset"; }

}  // namespace

TEST(Config, UnknownKeyNamesTheFieldPath) {
  try {
    parse_config(R"({"train": {"epochs": 3, "learning_rate": 0.1}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.learning_rate"), std::string::npos) << e.what();
  }
  try {
    parse_config(R"({"methods": [{"name": "a", "hidden": [{"type": "feature_weaken", "ws": 1.5}]}]})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("methods[0].hidden[0]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"seeds": [0, 0]})"), ConfigError);
}

TEST(Config, ResolvedJsonRoundTrips) {
  const ExperimentConfig a = parse_config(kSynthetic);
  const std::string text = config_to_json(a, R"({"tool": "weakenlab"})");
  const ExperimentConfig b = parse_config(text);
  EXPECT_EQ(config_to_json(b), config_to_json(a));
  EXPECT_EQ(b.methods.size(), 2u);
  EXPECT_EQ(b.train.epochs, 4u);
  EXPECT_EQ(b.model.input_shape, (Shape{4}));
}

TEST(Config, SeedAndThreadOverrides) {
  const fs::path dir = scratch("overrides");
  CommandOptions o = options(write_config(dir, kSynthetic), dir / "out");
  o.seed = 7;
  o.threads = 2;
  const ExperimentConfig cfg = resolve_config(o);
  EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(cfg.threads, 2u);
}

TEST(Train, ThreeSeedsGiveThreeMetricFilesAndOneSummary) {
  const fs::path dir = scratch("train");
  std::ostringstream log;
  ASSERT_EQ(cmd_train(options(write_config(dir, kSynthetic), dir / "out", &log)), kExitOk) << log.str();
  for (const char* method : {"baseline", "fw_hl"})
    for (int seed = 0; seed < 3; ++seed) {
      const fs::path run = run_dir(dir / "out", method, static_cast<std::uint64_t>(seed));
      EXPECT_TRUE(fs::exists(run / "metrics.csv")) << run;
      EXPECT_TRUE(fs::exists(run / "metrics.json")) << run;
      EXPECT_TRUE(fs::exists(run / "model.wklb")) << run;
      EXPECT_EQ(line_count(read_text(run / "metrics.csv")), 5u);  // header + 4 epochs
    }
  const std::string summary = read_text(dir / "out" / "summary.csv");
  EXPECT_EQ(line_count(summary), 3u);
  EXPECT_NE(summary.find("fw_hl,3,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(Train, ManifestReplayIsByteIdentical) {
  const fs::path dir = scratch("replay");
  ASSERT_EQ(cmd_train(options(write_config(dir, kSynthetic), dir / "first")), kExitOk);
  CommandOptions replay = options(dir / "first" / "manifest.json", dir / "second");
  replay.threads = 3;  // parallel replay must not change results
  ASSERT_EQ(cmd_train(replay), kExitOk);
  for (const char* method : {"baseline", "fw_hl"})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      EXPECT_EQ(read_text(run_dir(dir / "first", method, seed) / "metrics.csv"),
                read_text(run_dir(dir / "second", method, seed) / "metrics.csv"));
      EXPECT_EQ(read_text(run_dir(dir / "first", method, seed) / "model.wklb"),
                read_text(run_dir(dir / "second", method, seed) / "model.wklb"));
    }
  EXPECT_EQ(read_text(dir / "first" / "summary.csv"), read_text(dir / "second" / "summary.csv"));
}

TEST(Train, InvalidConfigExitsWithConfigCode) {
  const fs::path dir = scratch("invalid");
  std::ostringstream log;
  EXPECT_EQ(cmd_train(options(write_config(dir, R"({"train": {"momentum": 1.5}})"), dir / "out", &log)),
            kExitConfig);
  EXPECT_NE(log.str().find("train.momentum"), std::string::npos) << log.str();
  EXPECT_EQ(cmd_train(options(dir / "missing.json", dir / "out")), kExitConfig);
}

TEST(Sweep, CartesianRunCountAndCurveSchema) {
  const fs::path dir = scratch("sweep");
  CommandOptions o = options(write_config(dir, kSynthetic), dir / "out");
  o.threads = 2;
  ASSERT_EQ(cmd_sweep(o), kExitOk);
  const std::string curve = read_text(dir / "out" / "curve.csv");
  EXPECT_EQ(curve.substr(0, curve.find('\n')), "level,ws,seed,best_top1");
  EXPECT_EQ(line_count(curve), 1u + 12u);
  EXPECT_TRUE(fs::exists(dir / "out" / "hidden" / "ws0.8" / "seed2" / "metrics.csv"));

  CommandOptions bad = o;
  bad.ws_list = {0.5, 1.0};
  EXPECT_EQ(cmd_sweep(bad), kExitConfig);
}

TEST(Attack, ZeroEpsilonGivesCleanAccuracyAndTableShape) {
  const fs::path dir = scratch("attack");
  std::string cfg = kSynthetic;
  cfg.insert(cfg.rfind('}'), R"(, "attack": {"epsilon": 0.0, "iterations": 3})");
  const fs::path config = write_config(dir, cfg);
  ASSERT_EQ(cmd_train(options(config, dir / "out")), kExitOk);
  std::ostringstream log;
  ASSERT_EQ(cmd_attack(options(config, dir / "out", &log)), kExitOk) << log.str();

  const std::string clean = read_text(dir / "out" / "clean.csv");
  const std::string table = read_text(dir / "out" / "robustness.csv");
  // 2 methods x 2 attacks x {white, black}
  EXPECT_EQ(line_count(table), 1u + 8u);
  std::istringstream rows(read_text(dir / "out" / "robustness_runs.csv"));
  std::string row;
  std::getline(rows, row);
  while (std::getline(rows, row)) {
    // method,attack,mode,epsilon,seed,accuracy
    std::vector<std::string> f;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 6u);
    if (f[2] != "white") continue;
    const std::string needle = f[0] + "," + f[4] + "," + f[5] + ",";
    EXPECT_NE(clean.find(needle), std::string::npos) << row;
  }
}

TEST(Attack, MissingCheckpointFailsAndUnknownSourceIsConfigError) {
  const fs::path dir = scratch("attack_missing");
  const fs::path config = write_config(dir, kSynthetic);
  std::ostringstream log;
  EXPECT_EQ(cmd_attack(options(config, dir / "nothing", &log)), kExitFailure);
  EXPECT_NE(log.str().find("missing checkpoint"), std::string::npos) << log.str();

  std::string cfg = kSynthetic;
  cfg.insert(cfg.rfind('}'), R"(, "attack": {"source_method": "nope"})");
  EXPECT_EQ(cmd_attack(options(write_config(dir, cfg), dir / "nothing")), kExitConfig);
}

TEST(Eval, PrintsTopKForCheckpoint) {
  const fs::path dir = scratch("eval");
  const fs::path config = write_config(dir, kSynthetic);
  CommandOptions t = options(config, dir / "out");
  t.seed = 0;
  ASSERT_EQ(cmd_train(t), kExitOk);
  CommandOptions e = options(config, dir / "eval");
  std::ostringstream out;
  e.out = &out;
  e.checkpoint = run_dir(dir / "out", "baseline", 0) / "model.wklb";
  ASSERT_EQ(cmd_eval(e), kExitOk);
  EXPECT_EQ(out.str().rfind("top1 ", 0), 0u) << out.str();
  const auto result = nlohmann::json::parse(read_text(dir / "eval" / "eval.json"));
  EXPECT_GE(result["top5"].get<double>(), result["top1"].get<double>());

  e.checkpoint = dir / "absent.wklb";
  EXPECT_EQ(cmd_eval(e), kExitFailure);
}

TEST(Preview, StrongWeakeningIsApproximatelyBlack) {
  const fs::path dir = scratch("preview");
  const std::string cfg = R"({"dataset": {"root": ")" + mnist_root() + R"(", "val_subset": 5},
                              "preview": {"count": 3, "ws": [0.5, 0.99]}})";
  std::ostringstream log;
  ASSERT_EQ(cmd_weaken_preview(options(write_config(dir, cfg), dir / "out", &log)), kExitOk) << log.str();

  std::istringstream rows(read_text(dir / "out" / "preview.csv"));
  std::string row;
  std::getline(rows, row);
  std::map<std::string, double> original_max;
  int checked = 0;
  while (std::getline(rows, row)) {
    const auto a = row.find(','), b = row.rfind(',');
    const std::string sample = row.substr(0, a), ws = row.substr(a + 1, b - a - 1);
    const double mx = std::stod(row.substr(b + 1));
    if (ws == "0") original_max[sample] = mx;
    if (ws == "0.99") {
      EXPECT_LE(mx, 0.01 * original_max.at(sample) + 1e-15);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 3);

  const std::string pgm = read_text(dir / "out" / "images" / "sample0_ws0.99.pgm");
  ASSERT_EQ(pgm.rfind("P5\n28 28\n255\n", 0), 0u);
  const std::string pixels = pgm.substr(std::string("P5\n28 28\n255\n").size());
  ASSERT_EQ(pixels.size(), 784u);
  for (unsigned char p : pixels) EXPECT_LE(p, 3);  // 0.01 * 255 rounds to at most 3
  EXPECT_TRUE(fs::exists(dir / "out" / "images" / "sample2_original.pgm"));
  EXPECT_TRUE(fs::exists(dir / "out" / "scatter_ws0.99.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(Pgm, HeaderAndQuantization) {
  const fs::path dir = scratch("pgm");
  const std::vector<double> px{0.0, 0.5, 1.0, 2.0, -1.0, 1.0 / 255.0};
  write_pgm(dir / "a.pgm", px, 2, 3);
  const std::string bytes = read_text(dir / "a.pgm");
  const std::string expected = std::string("P5\n3 2\n255\n") + std::string{'\0', '\x80', '\xff', '\xff', '\0', '\x01'};
  EXPECT_EQ(bytes, expected);
  EXPECT_THROW(write_pgm(dir / "b.pgm", px, 2, 2), ShapeError);
}

TEST(RunParallel, RunsEveryTaskAndRethrows) {
  std::vector<int> hits(50, 0);
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < hits.size(); ++i) tasks.push_back([&, i] { hits[i] += 1; });
  run_parallel(tasks, 4);
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 50);
  tasks.push_back([] { throw std::runtime_error("boom"); });
  EXPECT_THROW(run_parallel(tasks, 3), std::runtime_error);
}

TEST(DataRoot, FallsBackToEnvironment) {
  DatasetConfig d;
  ::setenv("WEAKENLAB_DATA_DIR", mnist_root().c_str(), 1);
  EXPECT_EQ(resolve_data_root(d), fs::absolute(mnist_root()));
  ::unsetenv("WEAKENLAB_DATA_DIR");
  EXPECT_THROW(resolve_data_root(d), ConfigError);
  d.root = "somewhere";
  EXPECT_EQ(resolve_data_root(d), fs::absolute("somewhere"));
}

TEST(Binary, SubcommandsAndExitCodes) {
  const fs::path dir = scratch("binary");
  const fs::path config = write_config(dir, kSynthetic);
  const std::string cli = WEAKENLAB_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                                    (dir / "stderr.txt").string())
                                       .c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("train --config " + config.string() + " --out " + (dir / "out").string() + " --seed 1"), 0);
  EXPECT_TRUE(fs::exists(run_dir(dir / "out", "fw_hl", 1) / "metrics.csv"));
  EXPECT_FALSE(fs::exists(run_dir(dir / "out", "fw_hl", 0)));
  EXPECT_EQ(run("eval --config " + config.string() + " --out " + (dir / "ev").string() + " --checkpoint " +
                (run_dir(dir / "out", "fw_hl", 1) / "model.wklb").string()),
            0);
  EXPECT_EQ(read_text(dir / "stdout.txt").rfind("top1 ", 0), 0u);
  EXPECT_EQ(run("sweep --config " + config.string() + " --out " + (dir / "sw").string() +
                " --level embedding --ws 0.2,0.6 --seed 0 --threads 2"),
            0);
  EXPECT_EQ(line_count(read_text(dir / "sw" / "curve.csv")), 3u);
  EXPECT_EQ(run("attack --config " + config.string() + " --out " + (dir / "empty").string()), 1);
  EXPECT_EQ(run("train --config " + (dir / "nope.json").string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("--version"), 0);
}

TEST(Config, ShippedConfigsParse) {
  std::size_t parsed = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(WEAKENLAB_TEST_DATA_DIR).parent_path() / "configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++parsed;
  }
  EXPECT_GE(parsed, 4u);
}
