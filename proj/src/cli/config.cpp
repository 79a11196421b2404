#include "weakenlab/cli/config.hpp"

#include <cctype>
#include <cmath>
#include <concepts>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace weakenlab::cli {

using json = nlohmann::ordered_json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

// Reads scalar fields out of one JSON object and reports any key left unread.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string path(const char* key) const { return join(path_, key); }

  const json* take(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, double& out) {
    if (const json* v = take(key)) out = as_double(*v, path(key));
  }
  template <std::unsigned_integral T>
  void read(const char* key, T& out) {
    if (const json* v = take(key)) out = static_cast<T>(as_unsigned(*v, path(key)));
  }
  void read(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      const std::string p = path(key);
      if (!v->is_array()) fail(p, "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) out.push_back(as_double((*v)[i], p + "[" + std::to_string(i) + "]"));
    }
  }
  void read(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      const std::string p = path(key);
      if (!v->is_array()) fail(p, "expected an array of nonnegative integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_unsigned((*v)[i], p + "[" + std::to_string(i) + "]"));
      }
    }
  }
  void read(const char* key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      const std::string p = path(key);
      if (!v->is_array()) fail(p, "expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) fail(p + "[" + std::to_string(i) + "]", "expected a string");
        out.push_back((*v)[i].get<std::string>());
      }
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(join(path_, item.key()), "unknown key");
    }
  }

  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "expected a number");
    return v.get<double>();
  }
  static std::uint64_t as_unsigned(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) fail(path, "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const std::string& message) {
  if (!ok) fail(path, message);
}

// Library validate() calls throw std::invalid_argument; re-raise with a field path.
template <class F>
void check_with(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
}

InputTransform parse_input_transform(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string type;
  r.read("type", type);
  InputTransform out;
  if (type == "mixup") {
    Mixup t;
    r.read("alpha", t.alpha);
    out = t;
  } else if (type == "cutout") {
    Cutout t;
    r.read("patch_length", t.patch_length);
    out = t;
  } else if (type == "cutmix") {
    CutMix t;
    r.read("alpha", t.alpha);
    out = t;
  } else if (type == "feature_weaken") {
    FeatureWeakenInput t;
    r.read("ws", t.ws);
    out = t;
  } else {
    fail(join(path, "type"), "unknown input transform '" + type + "' (mixup, cutout, cutmix, feature_weaken)");
  }
  r.finish();
  return out;
}

HiddenTransform parse_hidden_transform(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string type;
  r.read("type", type);
  HiddenTransform out;
  if (type == "feature_weaken") {
    FeatureWeakenHidden t;
    r.read("ws", t.ws);
    out = t;
  } else if (type == "dropout") {
    Dropout t;
    r.read("p", t.p);
    out = t;
  } else {
    fail(join(path, "type"), "unknown hidden transform '" + type + "' (feature_weaken, dropout)");
  }
  r.finish();
  return out;
}

void read_augment_fields(ObjectReader& r, AugmentSpec& spec) {
  r.read("augment_seed", spec.rng_seed);
  if (const json* v = r.take("input")) {
    check(v->is_array(), r.path("input"), "expected an array of transforms");
    for (std::size_t i = 0; i < v->size(); ++i) {
      spec.input_transforms.push_back(
          parse_input_transform((*v)[i], r.path("input") + "[" + std::to_string(i) + "]"));
    }
  }
  if (const json* v = r.take("hidden")) {
    check(v->is_array(), r.path("hidden"), "expected an array of transforms");
    for (std::size_t i = 0; i < v->size(); ++i) {
      spec.hidden_transforms.push_back(
          parse_hidden_transform((*v)[i], r.path("hidden") + "[" + std::to_string(i) + "]"));
    }
  }
}

json input_transform_json(const InputTransform& t) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Mixup>) return {{"type", "mixup"}, {"alpha", v.alpha}};
        if constexpr (std::is_same_v<T, Cutout>) return {{"type", "cutout"}, {"patch_length", v.patch_length}};
        if constexpr (std::is_same_v<T, CutMix>) return {{"type", "cutmix"}, {"alpha", v.alpha}};
        if constexpr (std::is_same_v<T, FeatureWeakenInput>) return {{"type", "feature_weaken"}, {"ws", v.ws}};
      },
      t);
}

json hidden_transform_json(const HiddenTransform& t) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FeatureWeakenHidden>) return {{"type", "feature_weaken"}, {"ws", v.ws}};
        if constexpr (std::is_same_v<T, Dropout>) return {{"type", "dropout"}, {"p", v.p}};
      },
      t);
}

void augment_fields_json(json& j, const AugmentSpec& spec) {
  j["augment_seed"] = spec.rng_seed;
  j["input"] = json::array();
  for (const auto& t : spec.input_transforms) j["input"].push_back(input_transform_json(t));
  j["hidden"] = json::array();
  for (const auto& t : spec.hidden_transforms) j["hidden"].push_back(hidden_transform_json(t));
}

void parse_dataset(const json& j, DatasetConfig& d) {
  ObjectReader r(j, "dataset");
  r.read("kind", d.kind);
  check(d.kind == "idx" || d.kind == "synthetic", r.path("kind"), "expected \"idx\" or \"synthetic\"");
  r.read("root", d.root);
  r.read("train_images", d.train_images);
  r.read("train_labels", d.train_labels);
  r.read("val_images", d.val_images);
  r.read("val_labels", d.val_labels);
  r.read("class_count", d.class_count);
  r.read("train_subset", d.train_subset);
  r.read("val_subset", d.val_subset);
  r.read("subset_seed", d.subset_seed);
  if (const json* v = r.take("normalization")) {
    ObjectReader n(*v, r.path("normalization"));
    n.read("mean", d.normalization.mean);
    n.read("std", d.normalization.std);
    n.finish();
  } else if (d.kind == "idx") {
    d.normalization = {{0.1307}, {0.3081}};
  }
  if (const json* v = r.take("synthetic")) {
    ObjectReader s(*v, r.path("synthetic"));
    s.read("classes", d.synthetic.classes);
    s.read("dims", d.synthetic.dims);
    s.read("samples_per_class", d.synthetic.samples_per_class);
    s.read("mean_scale", d.synthetic.mean_scale);
    s.read("noise_std", d.synthetic.noise_std);
    s.read("seed", d.synthetic.seed);
    s.finish();
  }
  r.read("val_samples_per_class", d.val_samples_per_class);
  r.finish();
  if (d.kind == "synthetic" && !r.has("class_count")) d.class_count = d.synthetic.classes;
}

void parse_model(const json& j, ModelSpec& m) {
  ObjectReader r(j, "model");
  std::string kind(to_string(m.kind));
  r.read("kind", kind);
  check_with(r.path("kind"), [&] { m.kind = parse_model_kind(kind); });
  r.read("input_shape", m.input_shape);
  r.read("hidden_widths", m.hidden_widths);
  r.read("conv_channels", m.conv_channels);
  r.read("class_count", m.class_count);
  r.read("head_bias", m.head_bias);
  r.read("init_seed", m.init_seed);
  r.finish();
}

void parse_train(const json& j, TrainConfig& t) {
  ObjectReader r(j, "train");
  r.read("epochs", t.epochs);
  t.milestones = TrainConfig::desk_defaults(t.epochs).milestones;
  r.read("batch_size", t.batch_size);
  r.read("lr", t.lr);
  r.read("momentum", t.momentum);
  r.read("weight_decay", t.weight_decay);
  r.read("milestones", t.milestones);
  r.read("gamma", t.gamma);
  r.read("record_wall_time", t.record_wall_time);
  r.finish();
}

void parse_methods(const json& j, std::vector<MethodConfig>& methods) {
  check(j.is_array() && !j.empty(), "methods", "expected a non-empty array");
  methods.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "methods[" + std::to_string(i) + "]";
    ObjectReader r(j[i], path);
    MethodConfig m;
    m.name.clear();
    r.read("name", m.name);
    read_augment_fields(r, m.augment);
    r.finish();
    methods.push_back(std::move(m));
  }
}

void parse_attack(const json& j, AttackConfig& a) {
  ObjectReader r(j, "attack");
  std::vector<std::string> kinds;
  r.read("kinds", kinds);
  if (r.has("kinds")) {
    a.kinds.clear();
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      check_with(r.path("kinds") + "[" + std::to_string(i) + "]",
                 [&] { a.kinds.push_back(parse_attack_kind(kinds[i])); });
    }
  }
  r.read("epsilon", a.epsilon);
  r.read("iterations", a.iterations);
  r.read("source_method", a.source_method);
  r.read("checkpoint_dir", a.checkpoint_dir);
  r.finish();
}

void parse_sweep(const json& j, SweepConfig& s) {
  ObjectReader r(j, "sweep");
  r.read("levels", s.levels);
  r.read("ws", s.ws);
  r.finish();
}

void parse_preview(const json& j, PreviewConfig& p) {
  ObjectReader r(j, "preview");
  r.read("ws", p.ws);
  r.read("count", p.count);
  if (const json* v = r.take("dims")) {
    if (!v->is_null()) {
      check(v->is_array() && v->size() == 3, r.path("dims"), "expected exactly three indices");
      std::array<std::size_t, 3> dims{};
      for (std::size_t i = 0; i < 3; ++i) {
        dims[i] = ObjectReader::as_unsigned((*v)[i], r.path("dims") + "[" + std::to_string(i) + "]");
      }
      p.dims = dims;
    }
  }
  r.finish();
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.model = ModelSpec::mlp({784, 256, 128, 10});
  cfg.train = TrainConfig::desk_defaults(30);
  cfg.methods = {MethodConfig{}};
  cfg.dataset.normalization = {{0.1307}, {0.3081}};
  return cfg;
}

void ExperimentConfig::validate() const {
  check(!name.empty(), "name", "must not be empty");
  check(!seeds.empty(), "seeds", "must list at least one seed");
  check(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds", "duplicate seed");
  check(threads >= 1, "threads", "must be >= 1");

  const auto& d = dataset;
  check(d.class_count >= 2, "dataset.class_count", "must be >= 2");
  check(d.normalization.mean.size() == d.normalization.std.size(), "dataset.normalization",
        "mean and std need the same length");
  for (double s : d.normalization.std) check(s > 0.0, "dataset.normalization.std", "entries must be > 0");
  if (d.kind == "synthetic") {
    check_with("dataset.synthetic", [&] { d.synthetic.validate(); });
    check(d.class_count == d.synthetic.classes, "dataset.class_count", "must equal dataset.synthetic.classes");
    check(d.val_samples_per_class >= 1, "dataset.val_samples_per_class", "must be >= 1");
  }

  check_with("model", [&] { model.validate(); });
  check(model.class_count == d.class_count, "model.class_count",
        "is " + std::to_string(model.class_count) + " but the dataset has " + std::to_string(d.class_count) +
            " classes");
  if (d.kind == "synthetic") {
    check(shape_numel(model.input_shape) == d.synthetic.dims, "model.input_shape",
          "must hold " + std::to_string(d.synthetic.dims) + " values for the synthetic dataset");
  }

  const TrainConfig& t = train;
  check(t.epochs >= 1, "train.epochs", "must be >= 1");
  check(t.batch_size >= 1, "train.batch_size", "must be >= 1");
  check(t.lr >= 0.0 && std::isfinite(t.lr), "train.lr", "must be finite and >= 0");
  check(t.momentum >= 0.0 && t.momentum < 1.0, "train.momentum", "must lie in [0, 1)");
  check(t.weight_decay >= 0.0, "train.weight_decay", "must be >= 0");
  check(t.gamma > 0.0 && t.gamma <= 1.0, "train.gamma", "must lie in (0, 1]");
  check_with("train.milestones", [&] {
    TrainConfig bare = t;
    bare.augment = {};
    bare.validate();
  });

  std::set<std::string> names;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const std::string path = "methods[" + std::to_string(i) + "]";
    const auto& m = methods[i];
    check(!m.name.empty(), path + ".name", "must not be empty");
    for (char c : m.name) {
      check(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.', path + ".name",
            "may only use letters, digits, '_', '-' and '.'");
    }
    check(names.insert(m.name).second, path + ".name", "duplicate method name '" + m.name + "'");
    // Per-transform checks first so the error names the offending entry.
    for (std::size_t j = 0; j < m.augment.input_transforms.size(); ++j) {
      check_with(path + ".input[" + std::to_string(j) + "]",
                 [&] { AugmentSpec{{m.augment.input_transforms[j]}, {}, 0}.validate(); });
    }
    for (std::size_t j = 0; j < m.augment.hidden_transforms.size(); ++j) {
      check_with(path + ".hidden[" + std::to_string(j) + "]",
                 [&] { AugmentSpec{{}, {m.augment.hidden_transforms[j]}, 0}.validate(); });
    }
    check_with(path + ".input", [&] { m.augment.validate(); });
  }
  check(!methods.empty(), "methods", "must list at least one method");

  check(!attack.kinds.empty(), "attack.kinds", "must list at least one attack");
  check(attack.epsilon >= 0.0, "attack.epsilon", "must be >= 0");
  check(attack.iterations >= 1, "attack.iterations", "must be >= 1");

  for (std::size_t i = 0; i < sweep.levels.size(); ++i) {
    check(sweep.levels[i] == "hidden" || sweep.levels[i] == "embedding",
          "sweep.levels[" + std::to_string(i) + "]", "expected \"hidden\" or \"embedding\"");
  }
  for (std::size_t i = 0; i < sweep.ws.size(); ++i) {
    check_with("sweep.ws[" + std::to_string(i) + "]", [&] { validate_weaken_strength(sweep.ws[i]); });
  }
  for (std::size_t i = 0; i < preview.ws.size(); ++i) {
    check_with("preview.ws[" + std::to_string(i) + "]", [&] { validate_weaken_strength(preview.ws[i]); });
  }
}

ExperimentConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("<root>: malformed JSON: ") + e.what());
  }
  ExperimentConfig cfg = ExperimentConfig::defaults();
  ObjectReader r(j, "");
  r.read("name", cfg.name);
  if (const json* v = r.take("dataset")) parse_dataset(*v, cfg.dataset);
  if (cfg.dataset.kind == "synthetic") {
    // Default the model to the synthetic geometry unless configured.
    cfg.model = ModelSpec::mlp({cfg.dataset.synthetic.dims, 16, cfg.dataset.class_count});
  }
  if (const json* v = r.take("model")) parse_model(*v, cfg.model);
  if (const json* v = r.take("train")) parse_train(*v, cfg.train);
  if (const json* v = r.take("methods")) parse_methods(*v, cfg.methods);
  if (const json* v = r.take("seeds")) {
    check(v->is_array(), "seeds", "expected an array of nonnegative integers");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      cfg.seeds.push_back(ObjectReader::as_unsigned((*v)[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  r.read("threads", cfg.threads);
  if (const json* v = r.take("attack")) parse_attack(*v, cfg.attack);
  if (const json* v = r.take("sweep")) parse_sweep(*v, cfg.sweep);
  if (const json* v = r.take("preview")) parse_preview(*v, cfg.preview);
  r.take("manifest");  // provenance block written into manifests
  r.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<config>: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg, std::string_view manifest_extra) {
  json j;
  j["name"] = cfg.name;
  const auto& d = cfg.dataset;
  json ds = {{"kind", d.kind},
             {"root", d.root},
             {"train_images", d.train_images},
             {"train_labels", d.train_labels},
             {"val_images", d.val_images},
             {"val_labels", d.val_labels},
             {"class_count", d.class_count},
             {"train_subset", d.train_subset},
             {"val_subset", d.val_subset},
             {"subset_seed", d.subset_seed},
             {"normalization", {{"mean", d.normalization.mean}, {"std", d.normalization.std}}},
             {"synthetic",
              {{"classes", d.synthetic.classes},
               {"dims", d.synthetic.dims},
               {"samples_per_class", d.synthetic.samples_per_class},
               {"mean_scale", d.synthetic.mean_scale},
               {"noise_std", d.synthetic.noise_std},
               {"seed", d.synthetic.seed}}},
             {"val_samples_per_class", d.val_samples_per_class}};
  j["dataset"] = ds;
  j["model"] = {{"kind", std::string(to_string(cfg.model.kind))},
                {"input_shape", cfg.model.input_shape},
                {"hidden_widths", cfg.model.hidden_widths},
                {"conv_channels", cfg.model.conv_channels},
                {"class_count", cfg.model.class_count},
                {"head_bias", cfg.model.head_bias},
                {"init_seed", cfg.model.init_seed}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"milestones", cfg.train.milestones},
                {"gamma", cfg.train.gamma},
                {"record_wall_time", cfg.train.record_wall_time}};
  j["methods"] = json::array();
  for (const auto& m : cfg.methods) {
    json mj = {{"name", m.name}};
    augment_fields_json(mj, m.augment);
    j["methods"].push_back(mj);
  }
  j["seeds"] = cfg.seeds;
  j["threads"] = cfg.threads;
  json kinds = json::array();
  for (AttackKind k : cfg.attack.kinds) kinds.push_back(std::string(to_string(k)));
  j["attack"] = {{"kinds", kinds},
                 {"epsilon", cfg.attack.epsilon},
                 {"iterations", cfg.attack.iterations},
                 {"source_method", cfg.attack.source_method},
                 {"checkpoint_dir", cfg.attack.checkpoint_dir}};
  j["sweep"] = {{"levels", cfg.sweep.levels}, {"ws", cfg.sweep.ws}};
  j["preview"] = {{"ws", cfg.preview.ws}, {"count", cfg.preview.count}};
  j["preview"]["dims"] = cfg.preview.dims ? json(*cfg.preview.dims) : json(nullptr);
  if (!manifest_extra.empty()) j["manifest"] = json::parse(manifest_extra);
  return j.dump(2) + "\n";
}

TrainConfig run_config(const ExperimentConfig& cfg, const MethodConfig& method, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.augment = method.augment;
  return t;
}

ModelSpec run_model_spec(const ExperimentConfig& cfg, std::uint64_t seed) {
  ModelSpec spec = cfg.model;
  spec.init_seed = cfg.model.init_seed + seed;
  return spec;
}

AugmentSpec parse_augment(std::string_view json_text) {
  const json j = json::parse(json_text);
  ObjectReader r(j, "augment");
  AugmentSpec spec;
  read_augment_fields(r, spec);
  r.finish();
  return spec;
}

std::string augment_to_json(const AugmentSpec& spec) {
  json j;
  augment_fields_json(j, spec);
  return j.dump();
}

}  // namespace weakenlab::cli
