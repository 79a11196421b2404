#include "weakenlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "weakenlab/ops.hpp"

namespace weakenlab {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs) throw std::invalid_argument("milestones must be < epochs");
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("milestones must be strictly increasing");
    }
  }
  augment.validate();
}

TrainConfig TrainConfig::desk_defaults(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.milestones.clear();
  for (std::size_t m : {epochs / 2, epochs * 3 / 4}) {
    if (m > 0 && m < epochs && (cfg.milestones.empty() || m > cfg.milestones.back())) cfg.milestones.push_back(m);
  }
  return cfg;
}

Tensor cross_entropy(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 2 || labels.shape() != logits.shape()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  }
  const double n = static_cast<double>(logits.dim(0));
  return scalar_mul(sum(mul(log_softmax(logits, 1), labels)), -1.0 / n);
}

void sgd_step(std::span<Tensor> params, SgdState& state, const SgdHyper& hyper) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("sgd_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = hyper.momentum * v[j] + grad[j] + hyper.weight_decay * theta[j];
      theta[j] -= hyper.lr * v[j];
    }
    params[i].clear_grad();
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.lr;
  for (std::size_t m : cfg.milestones)
    if (m <= epoch) lr *= cfg.gamma;
  return lr;
}

bool topk_hit(std::span<const double> logits, int label, std::size_t k) {
  const auto y = static_cast<std::size_t>(label);
  const double target = logits[y];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j] > target || (logits[j] == target && j < y)) ++rank;
  }
  return rank < k;
}

TopK evaluate(const Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return {};
  const Model frozen = model.frozen();
  const std::size_t k = data.class_count;
  std::size_t hits1 = 0, hits5 = 0, seen = 0;
  auto it = batches(data, batch_size);
  while (auto batch = it.next()) {
    const Tensor logits = frozen.forward(batch->inputs);
    const auto values = logits.data();
    for (std::size_t i = 0; i < batch->size(); ++i) {
      const std::span<const double> row = values.subspan(i * k, k);
      const int label = data.labels[seen + i];
      hits1 += topk_hit(row, label, 1);
      hits5 += topk_hit(row, label, 5);
    }
    seen += batch->size();
  }
  const double n = static_cast<double>(data.size());
  return {100.0 * static_cast<double>(hits1) / n, 100.0 * static_cast<double>(hits5) / n};
}

std::vector<MetricsRecord> train(Model& model, const Dataset& train_data, const Dataset& val_data,
                                 const TrainConfig& cfg, const EpochObserver& observer) {
  cfg.validate();
  if (train_data.size() == 0) throw std::invalid_argument("train: empty training set");
  if (val_data.size() == 0) throw std::invalid_argument("train: empty validation set");
  if (train_data.class_count != model.spec().class_count) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_data.class_count) +
                                " classes, model has " + std::to_string(model.spec().class_count));
  }

  AugmentPipeline pipeline(cfg.augment, cfg.seed);
  const Rng shuffle_root = Rng(cfg.seed).split(kShuffleStream);
  std::vector<Tensor> params = model.parameter_tensors();
  SgdState state;
  std::vector<MetricsRecord> records;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    const SgdHyper hyper{lr, cfg.momentum, cfg.weight_decay};

    double loss_total = 0.0;
    auto it = batches(train_data, cfg.batch_size, shuffle_root.split(epoch).seed());
    while (auto batch = it.next()) {
      const Batch augmented = pipeline.apply_inputs(*batch);
      const Tensor rep = pipeline.apply_hidden(model.forward_features(augmented.inputs), true);
      const Tensor loss = cross_entropy(model.decision(rep), augmented.labels);
      backward(loss);
      sgd_step(params, state, hyper);
      loss_total += loss.item() * static_cast<double>(batch->size());
    }

    const TopK val = evaluate(model, val_data);
    MetricsRecord record;
    record.epoch = epoch;
    record.train_loss = loss_total / static_cast<double>(train_data.size());
    record.val_top1 = val.top1;
    record.val_top5 = val.top5;
    record.lr = lr;
    if (cfg.record_wall_time) {
      record.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    records.push_back(record);
    if (observer) observer(record);
  }
  return records;
}

double best_top1(std::span<const MetricsRecord> records) {
  double best = 0.0;
  for (const auto& r : records) best = std::max(best, r.val_top1);
  return best;
}

double final_top1_stddev(std::span<const MetricsRecord> records, std::size_t window) {
  if (records.empty() || window == 0) return 0.0;
  const std::size_t w = std::min(window, records.size());
  const auto tail = records.subspan(records.size() - w);
  double mean = 0.0;
  for (const auto& r : tail) mean += r.val_top1;
  mean /= static_cast<double>(w);
  double var = 0.0;
  for (const auto& r : tail) var += (r.val_top1 - mean) * (r.val_top1 - mean);
  return std::sqrt(var / static_cast<double>(w));
}

}  // namespace weakenlab
