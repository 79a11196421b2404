#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "weakenlab/augment.hpp"
#include "weakenlab/data.hpp"
#include "weakenlab/models.hpp"

namespace weakenlab {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones{15, 22};
  double gamma = 0.2;
  std::uint64_t seed = 0;
  AugmentSpec augment;
  // Wall time makes records non-reproducible, so it is opt-in; otherwise wall_ms is 0.
  bool record_wall_time = false;

  // lr == 0 is accepted as a degenerate no-update run.
  void validate() const;

  // Milestones at 50% and 75% of the run.
  static TrainConfig desk_defaults(std::size_t epochs);
};

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double val_top5 = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TopK {
  double top1 = 0.0;  // percent
  double top5 = 0.0;
};

// Mean over rows of -sum_k labels * log_softmax(logits). Soft labels allowed.
Tensor cross_entropy(const Tensor& logits, const Tensor& labels);

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Gradients are cleared afterwards. Every parameter must carry a gradient.
void sgd_step(std::span<Tensor> params, SgdState& state, const SgdHyper& hyper);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// True class ranked among the k largest logits; ties go to the lower index.
bool topk_hit(std::span<const double> logits, int label, std::size_t k);

// Clean evaluation, no training-time transforms.
TopK evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 500);

using EpochObserver = std::function<void(const MetricsRecord&)>;

std::vector<MetricsRecord> train(Model& model, const Dataset& train_data, const Dataset& val_data,
                                 const TrainConfig& cfg, const EpochObserver& observer = {});

double best_top1(std::span<const MetricsRecord> records);
// Population standard deviation of val_top1 over the last `window` epochs.
double final_top1_stddev(std::span<const MetricsRecord> records, std::size_t window);

}  // namespace weakenlab
