#pragma once

#include <cstddef>
#include <string_view>

#include "weakenlab/augment.hpp"
#include "weakenlab/data.hpp"
#include "weakenlab/models.hpp"

namespace weakenlab {

enum class AttackKind { fgsm, ifgsm };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 0.1;  // infinity-norm budget, normalized input units
  std::size_t iterations = 10;
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  // epsilon == 0 is accepted so the harness can reproduce clean accuracy.
  void validate() const;
};

struct ClipRange {
  double lo = 0.0;
  double hi = 1.0;
};

// Image of the raw pixel interval [0, 1] under the dataset normalization.
// Every channel must share the same normalization.
ClipRange clip_range(const Normalization& norm);

// Spec for a budget given in raw pixel units: epsilon is divided by the
// normalization std and clipping follows clip_range().
AttackSpec pixel_attack_spec(AttackKind kind, double pixel_epsilon, std::size_t iterations,
                             const Normalization& norm);

// x + eps * sign(grad_x CE), clipped to the valid range. sign(0) = 0.
Tensor fgsm(const Model& model, const Batch& batch, const AttackSpec& spec);
// Step eps / iterations; after each step clip to the valid range, then to the eps-ball.
Tensor ifgsm(const Model& model, const Batch& batch, const AttackSpec& spec);
// Dispatches on spec.kind.
Tensor attack(const Model& model, const Batch& batch, const AttackSpec& spec);

// Input gradient of the mean cross-entropy at x, parameters held fixed.
Tensor input_gradient(const Model& model, const Tensor& x, const Tensor& labels);

double max_abs_difference(const Tensor& a, const Tensor& b);

// Top-1 accuracy (percent) on adversarial copies of every sample in data,
// crafted against the model itself.
double evaluate_whitebox(const Model& model, const Dataset& data, const AttackSpec& spec,
                         std::size_t batch_size = 500);
// Samples crafted against source, accuracy measured on target.
double evaluate_blackbox(const Model& source, const Model& target, const Dataset& data, const AttackSpec& spec,
                         std::size_t batch_size = 500);

}  // namespace weakenlab
