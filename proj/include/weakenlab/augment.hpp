#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "weakenlab/rng.hpp"
#include "weakenlab/tensor.hpp"

namespace weakenlab {

/// Inputs [N, ...] with soft-label rows [N, K]. Hard labels are stored one-hot.
struct Batch {
  Tensor inputs;
  Tensor labels;
  std::size_t class_count = 0;

  std::size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
  // Rows nonnegative, summing to 1 within 1e-9; N >= 1.
  void validate() const;
};

Batch make_batch(Tensor inputs, std::span<const int> labels, std::size_t class_count);

// Transform parameters; ranges are checked by validate_transform().
struct Mixup {
  double alpha = 0.4;
};
struct Cutout {
  std::size_t patch_length = 16;
};
struct CutMix {
  double alpha = 1.0;
};
struct FeatureWeakenInput {
  double ws = 0.8;
};
struct FeatureWeakenHidden {
  double ws = 0.8;
};
struct Dropout {
  double p = 0.5;
};

using InputTransform = std::variant<Mixup, Cutout, CutMix, FeatureWeakenInput>;
using HiddenTransform = std::variant<FeatureWeakenHidden, Dropout>;

struct AugmentSpec {
  std::vector<InputTransform> input_transforms;
  std::vector<HiddenTransform> hidden_transforms;
  std::uint64_t rng_seed = 0;

  // Parameter ranges, plus at most one label-mixing transform.
  void validate() const;
  bool empty() const { return input_transforms.empty() && hidden_transforms.empty(); }
};

void validate_weaken_strength(double ws);

// Inputs scaled by (1 - ws); labels untouched.
Batch feature_weaken_input(const Batch& batch, double ws);

// Differentiable (1 - ws) scaling of a representation. Identity when not training.
Tensor feature_weaken_hidden(const Tensor& rep, double ws, bool training = true);

Batch mixup(const Batch& batch, double alpha, Rng& rng);
// Deterministic core: x_i <- lambda * x_i + (1 - lambda) * x_partner[i], same for labels.
Batch mixup_with(const Batch& batch, double lambda, std::span<const std::size_t> partner);

struct PixelCenter {
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Box {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

// Square of side `patch_length` centered at `center`, clipped to the image.
Box cutout_box(std::size_t height, std::size_t width, std::size_t patch_length, PixelCenter center);

Batch cutout(const Batch& batch, std::size_t patch_length, Rng& rng);
Batch cutout_at(const Batch& batch, std::size_t patch_length, std::span<const PixelCenter> centers);

struct CutMixResult {
  Batch batch;
  Box box;
  double label_weight = 1.0;  // weight of each sample's own label row
  std::vector<std::size_t> partner;
};

// Box of side (H * sqrt(1 - lambda)) x (W * sqrt(1 - lambda)) centered at `center`, clipped.
Box cutmix_box(std::size_t height, std::size_t width, double lambda, PixelCenter center);

CutMixResult cutmix(const Batch& batch, double alpha, Rng& rng);
// Pastes partner pixels inside `box`; label weight is 1 - area(box) / (H * W).
CutMixResult cutmix_with(const Batch& batch, const Box& box, std::span<const std::size_t> partner);

// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
Tensor dropout(const Tensor& rep, double p, Rng& rng, bool training);

/// Stateful executor of an AugmentSpec. Input and hidden transforms draw from
/// separate streams derived from (rng_seed, stream).
class AugmentPipeline {
 public:
  explicit AugmentPipeline(AugmentSpec spec, std::uint64_t stream = 0);

  Batch apply_inputs(const Batch& batch);
  Tensor apply_hidden(const Tensor& rep, bool training);

  const AugmentSpec& spec() const { return spec_; }

 private:
  AugmentSpec spec_;
  Rng input_rng_;
  Rng hidden_rng_;
};

// One-shot helpers with a fresh pipeline seeded from spec.rng_seed.
Batch apply_pipeline(const AugmentSpec& spec, const Batch& batch);
Tensor apply_hidden(const AugmentSpec& spec, const Tensor& rep, bool training);

}  // namespace weakenlab
