#include "weakenlab/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "weakenlab/train.hpp"

namespace weakenlab {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_kind(const AttackSpec& spec, AttackKind kind) {
  spec.validate();
  if (spec.kind != kind) {
    throw std::invalid_argument("attack spec is " + std::string(to_string(spec.kind)) + ", called " +
                                std::string(to_string(kind)));
  }
}

Tensor sign_step(const Model& frozen, const Tensor& x, const Tensor& labels, double step, double lo, double hi) {
  const Tensor grad = input_gradient(frozen, x, labels);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i] + step * sign(g[i]), lo, hi);
  return Tensor(x.shape(), std::move(out));
}

double adversarial_accuracy(const Model& source, const Model& target, const Dataset& data, const AttackSpec& spec,
                            std::size_t batch_size) {
  spec.validate();
  if (data.size() == 0) return 0.0;
  const Model frozen_source = source.frozen();
  const Model frozen_target = &source == &target ? frozen_source : target.frozen();
  const std::size_t k = data.class_count;
  std::size_t hits = 0, seen = 0;
  auto it = batches(data, batch_size);
  while (auto batch = it.next()) {
    const Tensor adv = attack(frozen_source, *batch, spec);
    const Tensor logits = frozen_target.forward(adv);
    for (std::size_t i = 0; i < batch->size(); ++i) {
      hits += topk_hit(logits.data().subspan(i * k, k), data.labels[seen + i], 1);
    }
    seen += batch->size();
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace

std::string_view to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "ifgsm"; }

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "ifgsm") return AttackKind::ifgsm;
  throw std::invalid_argument("unknown attack '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("epsilon must be finite and >= 0");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(clip_lo < clip_hi)) throw std::invalid_argument("clip range needs lo < hi");
}

ClipRange clip_range(const Normalization& norm) {
  if (norm.mean.empty()) return {0.0, 1.0};
  for (std::size_t c = 1; c < norm.mean.size(); ++c) {
    if (norm.mean[c] != norm.mean[0] || norm.std[c] != norm.std[0]) {
      throw std::invalid_argument("clip_range needs one normalization shared by all channels");
    }
  }
  return {(0.0 - norm.mean[0]) / norm.std[0], (1.0 - norm.mean[0]) / norm.std[0]};
}

AttackSpec pixel_attack_spec(AttackKind kind, double pixel_epsilon, std::size_t iterations,
                             const Normalization& norm) {
  const ClipRange clip = clip_range(norm);
  AttackSpec spec;
  spec.kind = kind;
  spec.epsilon = norm.std.empty() ? pixel_epsilon : pixel_epsilon / norm.std[0];
  spec.iterations = iterations;
  spec.clip_lo = clip.lo;
  spec.clip_hi = clip.hi;
  spec.validate();
  return spec;
}

Tensor input_gradient(const Model& model, const Tensor& x, const Tensor& labels) {
  const Model frozen = model.parameters().empty() || !model.parameters()[0].value.requires_grad()
                           ? model
                           : model.frozen();
  const Tensor probe(x.shape(), {x.data().begin(), x.data().end()}, true);
  backward(cross_entropy(frozen.forward(probe), labels));
  return Tensor(x.shape(), {probe.grad().begin(), probe.grad().end()});
}

Tensor fgsm(const Model& model, const Batch& batch, const AttackSpec& spec) {
  require_kind(spec, AttackKind::fgsm);
  return sign_step(model, batch.inputs, batch.labels, spec.epsilon, spec.clip_lo, spec.clip_hi);
}

Tensor ifgsm(const Model& model, const Batch& batch, const AttackSpec& spec) {
  require_kind(spec, AttackKind::ifgsm);
  const double step = spec.epsilon / static_cast<double>(spec.iterations);
  const auto x0 = batch.inputs.data();
  Tensor x = batch.inputs;
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    x = sign_step(model, x, batch.labels, step, spec.clip_lo, spec.clip_hi);
    auto xv = x.mutable_data();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = std::clamp(xv[i], x0[i] - spec.epsilon, x0[i] + spec.epsilon);
  }
  return x;
}

Tensor attack(const Model& model, const Batch& batch, const AttackSpec& spec) {
  return spec.kind == AttackKind::fgsm ? fgsm(model, batch, spec) : ifgsm(model, batch, spec);
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_difference: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double evaluate_whitebox(const Model& model, const Dataset& data, const AttackSpec& spec, std::size_t batch_size) {
  return adversarial_accuracy(model, model, data, spec, batch_size);
}

double evaluate_blackbox(const Model& source, const Model& target, const Dataset& data, const AttackSpec& spec,
                         std::size_t batch_size) {
  if (shape_numel(source.spec().input_shape) != shape_numel(target.spec().input_shape) ||
      source.spec().class_count != target.spec().class_count) {
    throw std::invalid_argument("black-box source and target must share input geometry and class count");
  }
  return adversarial_accuracy(source, target, data, spec, batch_size);
}

}  // namespace weakenlab
