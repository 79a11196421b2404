#include "weakenlab/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "weakenlab/checkpoint.hpp"
#include "weakenlab/ops.hpp"
#include "weakenlab/report.hpp"

#include "json.hpp"

namespace weakenlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void line(const std::string& text) {
    if (!out_) return;
    std::lock_guard<std::mutex> lock(mu_);
    *out_ << text << '\n' << std::flush;
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

template <class F>
int guarded(const CommandOptions& opts, const char* command, F&& body) {
  Logger log(opts.log);
  try {
    body(log);
    return kExitOk;
  } catch (const ConfigError& e) {
    log.line(std::string(command) + ": config error: " + e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log.line(std::string(command) + ": error: " + e.what());
    return kExitFailure;
  }
}

std::string manifest_block(const std::string& command, const DatasetPair& data, const fs::path& out) {
  json m = {{"tool", "weakenlab"},
            {"version", WEAKENLAB_VERSION},
            {"command", command},
            {"train_provenance", data.train.provenance},
            {"val_provenance", data.val.provenance},
            {"replay", "weakenlab " + command + " --config " + (out / "manifest.json").string() + " --out <dir>"}};
  return m.dump();
}

void write_manifest(const fs::path& out, const ExperimentConfig& cfg, const std::string& command,
                    const DatasetPair& data) {
  write_text(out / "manifest.json", config_to_json(cfg, manifest_block(command, data, out)));
}

std::string describe(const MetricsRecord& r) {
  std::ostringstream ss;
  ss << "epoch " << r.epoch << " loss " << format_number(r.train_loss) << " top1 " << format_number(r.val_top1)
     << " top5 " << format_number(r.val_top5) << " lr " << format_number(r.lr);
  return ss.str();
}

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  double best_top1 = 0.0;
  double final_top1 = 0.0;
  double final5_std = 0.0;
};

// Trains one (method, seed) run and writes its metrics and checkpoint under dir.
RunResult train_one(const ExperimentConfig& cfg, const MethodConfig& method, std::uint64_t seed,
                    const DatasetPair& data, const fs::path& dir, Logger& log) {
  Model model(run_model_spec(cfg, seed));
  const std::string tag = "[" + method.name + " seed=" + std::to_string(seed) + "] ";
  const auto records = train(model, data.train, data.val, run_config(cfg, method, seed),
                             [&](const MetricsRecord& r) { log.line(tag + describe(r)); });
  write_text(dir / "metrics.csv", metrics_csv(records));
  write_text(dir / "metrics.json", metrics_json(records));
  save_checkpoint(model, dir / "model.wklb");
  return {method.name, seed, best_top1(records), records.back().val_top1, final_top1_stddev(records, 5)};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<std::size_t> top_variance_dims(const Tensor& flat, std::size_t count) {
  const std::size_t n = flat.dim(0), d = flat.dim(1);
  std::vector<double> var(d, 0.0);
  const auto v = flat.data();
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += v[i * d + j];
    m /= static_cast<double>(std::max<std::size_t>(n, 1));
    for (std::size_t i = 0; i < n; ++i) var[j] += (v[i * d + j] - m) * (v[i * d + j] - m);
  }
  std::vector<std::size_t> idx(d);
  for (std::size_t j = 0; j < d; ++j) idx[j] = j;
  // Stable: equal variances keep the lower index first.
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  idx.resize(std::min(count, d));
  return idx;
}

Dataset flattened(const Dataset& ds) {
  Dataset flat = ds;
  flat.inputs = reshape(ds.inputs, {ds.size(), shape_numel(ds.sample_shape())});
  return flat;
}

// The configured budget is in raw pixel units. Synthetic features have no
// valid range, so only image datasets are clipped.
AttackSpec attack_spec(const ExperimentConfig& cfg, AttackKind kind, const Normalization& norm) {
  AttackSpec spec = pixel_attack_spec(kind, cfg.attack.epsilon, cfg.attack.iterations, norm);
  if (cfg.dataset.kind == "synthetic") {
    spec.clip_lo = std::numeric_limits<double>::lowest();
    spec.clip_hi = std::numeric_limits<double>::max();
  }
  return spec;
}

}  // namespace

fs::path resolve_data_root(const DatasetConfig& cfg) {
  if (!cfg.root.empty()) return fs::absolute(cfg.root);
  if (const char* env = std::getenv("WEAKENLAB_DATA_DIR"); env && *env) return fs::absolute(env);
  throw ConfigError("dataset.root: not set and WEAKENLAB_DATA_DIR is unset");
}

DatasetPair load_datasets(const DatasetConfig& cfg, bool normalize_inputs) {
  DatasetPair out;
  if (cfg.kind == "synthetic") {
    SyntheticSpec spec = cfg.synthetic;
    spec.samples_per_class = cfg.synthetic.samples_per_class + cfg.val_samples_per_class;
    const Dataset all = synthetic_blobs(spec);
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t k = 0; k < spec.classes; ++k)
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        (s < cfg.synthetic.samples_per_class ? train_idx : val_idx).push_back(k * spec.samples_per_class + s);
      }
    out.train = select(all, train_idx);
    out.val = select(all, val_idx);
    out.train.provenance = all.provenance + " train";
    out.val.provenance = all.provenance + " val";
  } else {
    const fs::path root = resolve_data_root(cfg);
    out.train = load_idx(root / cfg.train_images, root / cfg.train_labels, cfg.class_count);
    out.val = load_idx(root / cfg.val_images, root / cfg.val_labels, cfg.class_count);
    if (cfg.train_subset > 0) out.train = subsample(out.train, cfg.train_subset, cfg.subset_seed);
    if (cfg.val_subset > 0) out.val = subsample(out.val, cfg.val_subset, cfg.subset_seed + 1);
  }
  if (normalize_inputs && !cfg.normalization.mean.empty()) {
    out.train = normalize(out.train, cfg.normalization.mean, cfg.normalization.std);
    out.val = normalize(out.val, cfg.normalization.mean, cfg.normalization.std);
  }
  return out;
}

ExperimentConfig resolve_config(const CommandOptions& opts) {
  ExperimentConfig cfg = opts.config_path.empty() ? ExperimentConfig::defaults() : load_config(opts.config_path);
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (opts.threads) {
    if (*opts.threads < 1) throw ConfigError("--threads: must be >= 1");
    cfg.threads = *opts.threads;
  }
  if (cfg.dataset.kind == "idx") cfg.dataset.root = resolve_data_root(cfg.dataset).string();
  cfg.validate();
  return cfg;
}

fs::path run_dir(const fs::path& out, const std::string& method, std::uint64_t seed) {
  return out / method / ("seed" + std::to_string(seed));
}

void run_parallel(const std::vector<std::function<void()>>& tasks, std::size_t threads) {
  if (threads <= 1 || tasks.size() <= 1) {
    for (const auto& t : tasks) t();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < std::min(threads, tasks.size()); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_train(const CommandOptions& opts) {
  return guarded(opts, "train", [&](Logger& log) {
    const ExperimentConfig cfg = resolve_config(opts);
    const DatasetPair data = load_datasets(cfg.dataset);
    log.line("train: " + std::to_string(data.train.size()) + " train / " + std::to_string(data.val.size()) +
             " val samples, " + std::to_string(cfg.methods.size()) + " method(s) x " +
             std::to_string(cfg.seeds.size()) + " seed(s)");

    std::vector<RunResult> results(cfg.methods.size() * cfg.seeds.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t m = 0; m < cfg.methods.size(); ++m)
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        tasks.push_back([&, m, s] {
          const auto& method = cfg.methods[m];
          const std::uint64_t seed = cfg.seeds[s];
          results[m * cfg.seeds.size() + s] =
              train_one(cfg, method, seed, data, run_dir(opts.out_dir, method.name, seed), log);
        });
      }
    run_parallel(tasks, cfg.threads);

    std::string summary = "method,seed_count,mean_best_top1,mean_final_top1,mean_final5_top1_std\n";
    json detail = json::array();
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      std::vector<double> best, final_top1, spread;
      json runs = json::array();
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
        const RunResult& r = results[m * cfg.seeds.size() + s];
        best.push_back(r.best_top1);
        final_top1.push_back(r.final_top1);
        spread.push_back(r.final5_std);
        runs.push_back({{"seed", r.seed}, {"best_top1", r.best_top1}, {"final_top1", r.final_top1},
                        {"final5_top1_std", r.final5_std}});
      }
      summary += cfg.methods[m].name + ',' + std::to_string(cfg.seeds.size()) + ',' + format_number(mean(best)) +
                 ',' + format_number(mean(final_top1)) + ',' + format_number(mean(spread)) + '\n';
      detail.push_back({{"method", cfg.methods[m].name}, {"mean_best_top1", mean(best)}, {"runs", runs}});
      log.line("train: " + cfg.methods[m].name + " mean best top1 " + format_number(mean(best)));
    }
    write_text(opts.out_dir / "summary.csv", summary);
    write_text(opts.out_dir / "summary.json", detail.dump(2) + "\n");
    write_manifest(opts.out_dir, cfg, "train", data);
  });
}

int cmd_sweep(const CommandOptions& opts) {
  return guarded(opts, "sweep", [&](Logger& log) {
    ExperimentConfig cfg = resolve_config(opts);
    if (opts.level) cfg.sweep.levels = {*opts.level};
    if (!opts.ws_list.empty()) cfg.sweep.ws = opts.ws_list;
    cfg.validate();
    const DatasetPair data = load_datasets(cfg.dataset);

    struct Cell {
      std::string level;
      double ws;
      std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& level : cfg.sweep.levels)
      for (double ws : cfg.sweep.ws)
        for (std::uint64_t seed : cfg.seeds) cells.push_back({level, ws, seed});
    log.line("sweep: " + std::to_string(cells.size()) + " runs");

    std::vector<SweepRow> rows(cells.size());
    std::vector<std::function<void()>> tasks;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      tasks.push_back([&, i] {
        const Cell& c = cells[i];
        MethodConfig method;
        method.name = c.level + "_ws" + format_number(c.ws);
        if (c.level == "hidden") {
          method.augment.hidden_transforms = {FeatureWeakenHidden{c.ws}};
        } else {
          method.augment.input_transforms = {FeatureWeakenInput{c.ws}};
        }
        const fs::path dir = opts.out_dir / c.level / ("ws" + format_number(c.ws)) / ("seed" + std::to_string(c.seed));
        const RunResult r = train_one(cfg, method, c.seed, data, dir, log);
        rows[i] = {c.level, c.ws, c.seed, r.best_top1};
      });
    }
    run_parallel(tasks, cfg.threads);

    write_text(opts.out_dir / "curve.csv", sweep_csv(rows));
    std::string means = "level,ws,mean_best_top1\n";
    for (std::size_t i = 0; i < rows.size(); i += cfg.seeds.size()) {
      std::vector<double> best;
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) best.push_back(rows[i + s].best_top1);
      means += rows[i].level + ',' + format_number(rows[i].ws) + ',' + format_number(mean(best)) + '\n';
    }
    write_text(opts.out_dir / "curve_summary.csv", means);
    write_manifest(opts.out_dir, cfg, "sweep", data);
  });
}

int cmd_attack(const CommandOptions& opts) {
  return guarded(opts, "attack", [&](Logger& log) {
    const ExperimentConfig cfg = resolve_config(opts);
    const auto& methods = cfg.methods;
    const auto source_it = std::find_if(methods.begin(), methods.end(),
                                        [&](const MethodConfig& m) { return m.name == cfg.attack.source_method; });
    if (source_it == methods.end()) {
      throw ConfigError("attack.source_method: '" + cfg.attack.source_method + "' is not a configured method");
    }
    const std::size_t source = static_cast<std::size_t>(source_it - methods.begin());
    const fs::path ckpt_dir = cfg.attack.checkpoint_dir.empty() ? opts.out_dir : fs::path(cfg.attack.checkpoint_dir);
    const DatasetPair data = load_datasets(cfg.dataset);

    // Fail fast on missing checkpoints before any attack work.
    for (const auto& m : methods)
      for (std::uint64_t seed : cfg.seeds) {
        const fs::path p = run_dir(ckpt_dir, m.name, seed) / "model.wklb";
        if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
      }

    const std::size_t nm = methods.size(), nk = cfg.attack.kinds.size(), ns = cfg.seeds.size();
    // [method][kind][seed]
    std::vector<double> white(nm * nk * ns), black(nm * nk * ns), clean1(nm * ns), clean5(nm * ns);
    std::vector<std::function<void()>> tasks;
    for (std::size_t s = 0; s < ns; ++s) {
      tasks.push_back([&, s] {
        const std::uint64_t seed = cfg.seeds[s];
        std::vector<Model> models;
        for (const auto& m : methods) {
          Model model(run_model_spec(cfg, seed));
          load_checkpoint(model, run_dir(ckpt_dir, m.name, seed) / "model.wklb");
          models.push_back(model.frozen());
        }
        for (std::size_t m = 0; m < nm; ++m) {
          const TopK clean = evaluate(models[m], data.val);
          clean1[m * ns + s] = clean.top1;
          clean5[m * ns + s] = clean.top5;
        }
        for (std::size_t k = 0; k < nk; ++k) {
          const AttackSpec spec = attack_spec(cfg, cfg.attack.kinds[k], data.val.normalization);
          for (std::size_t m = 0; m < nm; ++m) {
            white[(m * nk + k) * ns + s] = evaluate_whitebox(models[m], data.val, spec);
            black[(m * nk + k) * ns + s] = m == source ? white[(m * nk + k) * ns + s]
                                                       : evaluate_blackbox(models[source], models[m], data.val, spec);
            log.line("attack: [" + methods[m].name + " seed=" + std::to_string(seed) + "] " +
                     std::string(to_string(spec.kind)) + " white " + format_number(white[(m * nk + k) * ns + s]) +
                     " black " + format_number(black[(m * nk + k) * ns + s]));
          }
        }
      });
    }
    run_parallel(tasks, cfg.threads);

    std::vector<RobustnessRow> rows;
    std::string runs = "method,attack,mode,epsilon,seed,accuracy\n";
    for (const char* mode : {"white", "black"}) {
      const auto& table = std::string(mode) == "white" ? white : black;
      for (std::size_t m = 0; m < nm; ++m)
        for (std::size_t k = 0; k < nk; ++k) {
          std::vector<double> acc;
          for (std::size_t s = 0; s < ns; ++s) {
            acc.push_back(table[(m * nk + k) * ns + s]);
            runs += methods[m].name + ',' + std::string(to_string(cfg.attack.kinds[k])) + ',' + mode + ',' +
                    format_number(cfg.attack.epsilon) + ',' + std::to_string(cfg.seeds[s]) + ',' +
                    format_number(acc.back()) + '\n';
          }
          rows.push_back({methods[m].name, std::string(to_string(cfg.attack.kinds[k])), mode, cfg.attack.epsilon,
                          mean(acc)});
        }
    }
    std::string clean = "method,seed,top1,top5\n";
    for (std::size_t m = 0; m < nm; ++m)
      for (std::size_t s = 0; s < ns; ++s) {
        clean += methods[m].name + ',' + std::to_string(cfg.seeds[s]) + ',' + format_number(clean1[m * ns + s]) +
                 ',' + format_number(clean5[m * ns + s]) + '\n';
      }
    write_text(opts.out_dir / "robustness.csv", robustness_csv(rows));
    write_text(opts.out_dir / "robustness_runs.csv", runs);
    write_text(opts.out_dir / "clean.csv", clean);
    write_manifest(opts.out_dir, cfg, "attack", data);
  });
}

int cmd_eval(const CommandOptions& opts) {
  return guarded(opts, "eval", [&](Logger& log) {
    const ExperimentConfig cfg = resolve_config(opts);
    if (opts.checkpoint.empty()) throw ConfigError("--checkpoint: required");
    if (opts.split != "val" && opts.split != "train") throw ConfigError("--split: expected val or train");
    if (!fs::exists(opts.checkpoint)) throw std::runtime_error("missing checkpoint " + opts.checkpoint.string());
    const DatasetPair data = load_datasets(cfg.dataset);
    Model model(cfg.model);
    load_checkpoint(model, opts.checkpoint);
    const TopK r = evaluate(model, opts.split == "val" ? data.val : data.train);
    const std::string line = "top1 " + format_number(r.top1) + " top5 " + format_number(r.top5);
    if (opts.out) *opts.out << line << '\n';
    log.line("eval: " + line);
    const json result = {{"checkpoint", fs::absolute(opts.checkpoint).string()},
                         {"split", opts.split},
                         {"top1", r.top1},
                         {"top5", r.top5}};
    write_text(opts.out_dir / "eval.json", result.dump(2) + "\n");
    write_manifest(opts.out_dir, cfg, "eval", data);
  });
}

int cmd_weaken_preview(const CommandOptions& opts) {
  return guarded(opts, "weaken-preview", [&](Logger& log) {
    ExperimentConfig cfg = resolve_config(opts);
    if (!opts.ws_list.empty()) cfg.preview.ws = opts.ws_list;
    const DatasetPair data = load_datasets(cfg.dataset, false);
    const Dataset& src = data.val;
    const std::size_t count = std::min(cfg.preview.count, src.size());

    std::string table = "sample,ws,max_value\n";
    const Shape sample = src.sample_shape();
    const bool images = sample.size() == 3;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t width = shape_numel(sample);
      const auto original = src.inputs.data().subspan(i * width, width);
      std::vector<double> levels{0.0};
      levels.insert(levels.end(), cfg.preview.ws.begin(), cfg.preview.ws.end());
      for (double ws : levels) {
        std::vector<double> weakened(original.size());
        for (std::size_t j = 0; j < weakened.size(); ++j) weakened[j] = (1.0 - ws) * original[j];
        table += std::to_string(i) + ',' + format_number(ws) + ',' +
                 format_number(*std::max_element(weakened.begin(), weakened.end())) + '\n';
        if (!images) continue;
        const std::size_t channels = sample[0], h = sample[1], w = sample[2];
        for (std::size_t c = 0; c < channels; ++c) {
          std::string name = "sample" + std::to_string(i);
          if (channels > 1) name += "_c" + std::to_string(c);
          name += ws == 0.0 ? "_original.pgm" : "_ws" + format_number(ws) + ".pgm";
          write_pgm(opts.out_dir / "images" / name, std::span<const double>(weakened).subspan(c * h * w, h * w), h, w);
        }
      }
    }
    write_text(opts.out_dir / "preview.csv", table);

    const Dataset flat = flattened(src);
    if (!cfg.preview.dims) {
      const auto top = top_variance_dims(flat.inputs, 3);
      if (top.size() < 3) throw ConfigError("preview.dims: samples have fewer than three dimensions");
      cfg.preview.dims = std::array<std::size_t, 3>{top[0], top[1], top[2]};
    }
    for (double ws : cfg.preview.ws) {
      export_scatter(flat, scale_inputs(flat, 1.0 - ws), *cfg.preview.dims,
                     opts.out_dir / ("scatter_ws" + format_number(ws) + ".csv"));
    }
    log.line("weaken-preview: " + std::to_string(count) + " samples x " + std::to_string(cfg.preview.ws.size()) +
             " strengths written to " + opts.out_dir.string());
    write_manifest(opts.out_dir, cfg, "weaken-preview", data);
  });
}

void write_pgm(const fs::path& path, std::span<const double> pixels, std::size_t height, std::size_t width) {
  if (pixels.size() != height * width) throw ShapeError("write_pgm: pixel count does not match geometry");
  std::string bytes = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : pixels) bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  write_text(path, bytes);
}

}  // namespace weakenlab::cli
