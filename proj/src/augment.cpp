#include "weakenlab/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "weakenlab/ops.hpp"

namespace weakenlab {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct SpatialDims {
  std::size_t n, c, h, w;
};

SpatialDims spatial_dims(const Batch& batch, const char* op) {
  const Tensor& x = batch.inputs;
  if (x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected spatial inputs [N,C,H,W], got " +
                     shape_str(x.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

void require_pairable(const Batch& batch, const char* op) {
  if (batch.size() < 2) {
    throw std::invalid_argument(std::string(op) + ": needs at least 2 samples, got " +
                                std::to_string(batch.size()));
  }
}

void validate_partner(std::span<const std::size_t> partner, std::size_t n) {
  if (partner.size() != n) throw std::invalid_argument("partner list length differs from batch size");
  for (std::size_t p : partner)
    if (p >= n) throw std::invalid_argument("partner index out of range");
}

void validate_alpha(double alpha, const char* op) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument(std::string(op) + ": alpha must be finite and > 0");
  }
}

void validate_dropout(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
}

// out_row = w * a_row + (1 - w) * b_row over rows of a flat [N, row] buffer.
std::vector<double> mix_rows(std::span<const double> src, std::size_t row, double weight,
                             std::span<const std::size_t> partner) {
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < partner.size(); ++i) {
    const double* own = src.data() + i * row;
    const double* other = src.data() + partner[i] * row;
    double* dst = out.data() + i * row;
    for (std::size_t j = 0; j < row; ++j) dst[j] = weight * own[j] + (1.0 - weight) * other[j];
  }
  return out;
}

Box clip_box(long y0, long y1, long x0, long x1, std::size_t h, std::size_t w) {
  auto clamp = [](long v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(hi)));
  };
  return {clamp(y0, h), clamp(y1, h), clamp(x0, w), clamp(x1, w)};
}

}  // namespace

void Batch::validate() const {
  if (inputs.rank() == 0 || inputs.dim(0) == 0) throw std::invalid_argument("batch is empty");
  const std::size_t n = inputs.dim(0);
  if (labels.shape() != Shape{n, class_count}) {
    throw ShapeError("batch labels have shape " + shape_str(labels.shape()) + ", expected " +
                     shape_str({n, class_count}));
  }
  const auto y = labels.data();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < class_count; ++k) {
      const double v = y[i * class_count + k];
      if (v < 0.0) throw std::invalid_argument("label row " + std::to_string(i) + " is negative");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("label row " + std::to_string(i) + " sums to " +
                                  std::to_string(total));
    }
  }
}

Batch make_batch(Tensor inputs, std::span<const int> labels, std::size_t class_count) {
  if (inputs.rank() == 0 || inputs.dim(0) != labels.size()) {
    throw ShapeError("make_batch: " + std::to_string(labels.size()) + " labels for inputs " +
                     shape_str(inputs.shape()));
  }
  std::vector<double> onehot(labels.size() * class_count, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(class_count) + ")");
    }
    onehot[i * class_count + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return {std::move(inputs), Tensor({labels.size(), class_count}, std::move(onehot)), class_count};
}

void validate_weaken_strength(double ws) {
  if (!(ws > 0.0 && ws < 1.0)) {
    throw std::invalid_argument("feature weaken strength must lie in (0, 1), got " +
                                std::to_string(ws));
  }
}

void AugmentSpec::validate() const {
  int mixing = 0;
  for (const auto& t : input_transforms) {
    std::visit(Overloaded{
                   [&](const Mixup& m) {
                     validate_alpha(m.alpha, "mixup");
                     ++mixing;
                   },
                   [&](const CutMix& m) {
                     validate_alpha(m.alpha, "cutmix");
                     ++mixing;
                   },
                   [](const Cutout& c) {
                     if (c.patch_length < 1) throw std::invalid_argument("cutout: patch_length must be >= 1");
                   },
                   [](const FeatureWeakenInput& f) { validate_weaken_strength(f.ws); },
               },
               t);
  }
  if (mixing > 1) {
    throw std::invalid_argument("at most one label-mixing transform (mixup or cutmix) per pipeline");
  }
  for (const auto& t : hidden_transforms) {
    std::visit(Overloaded{
                   [](const FeatureWeakenHidden& f) { validate_weaken_strength(f.ws); },
                   [](const Dropout& d) { validate_dropout(d.p); },
               },
               t);
  }
}

Batch feature_weaken_input(const Batch& batch, double ws) {
  validate_weaken_strength(ws);
  return {scalar_mul(batch.inputs, 1.0 - ws), batch.labels, batch.class_count};
}

Tensor feature_weaken_hidden(const Tensor& rep, double ws, bool training) {
  validate_weaken_strength(ws);
  if (!training) return rep;
  return scalar_mul(rep, 1.0 - ws);
}

Batch mixup(const Batch& batch, double alpha, Rng& rng) {
  validate_alpha(alpha, "mixup");
  require_pairable(batch, "mixup");
  const double lambda = rng.beta(alpha, alpha);
  const auto partner = rng.permutation(batch.size());
  return mixup_with(batch, lambda, partner);
}

Batch mixup_with(const Batch& batch, double lambda, std::span<const std::size_t> partner) {
  require_pairable(batch, "mixup");
  validate_partner(partner, batch.size());
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup: lambda outside [0, 1]");
  const std::size_t n = batch.size();
  const std::size_t row = batch.inputs.numel() / n;
  Tensor inputs(batch.inputs.shape(), mix_rows(batch.inputs.data(), row, lambda, partner));
  Tensor labels(batch.labels.shape(), mix_rows(batch.labels.data(), batch.class_count, lambda, partner));
  return {std::move(inputs), std::move(labels), batch.class_count};
}

Box cutout_box(std::size_t height, std::size_t width, std::size_t patch_length, PixelCenter center) {
  const long half = static_cast<long>(patch_length / 2);
  const long len = static_cast<long>(patch_length);
  const long y0 = static_cast<long>(center.y) - half;
  const long x0 = static_cast<long>(center.x) - half;
  return clip_box(y0, y0 + len, x0, x0 + len, height, width);
}

Batch cutout(const Batch& batch, std::size_t patch_length, Rng& rng) {
  const SpatialDims d = spatial_dims(batch, "cutout");
  std::vector<PixelCenter> centers(d.n);
  for (auto& c : centers) {
    c.y = rng.uniform_index(d.h);
    c.x = rng.uniform_index(d.w);
  }
  return cutout_at(batch, patch_length, centers);
}

Batch cutout_at(const Batch& batch, std::size_t patch_length, std::span<const PixelCenter> centers) {
  const SpatialDims d = spatial_dims(batch, "cutout");
  if (patch_length < 1) throw std::invalid_argument("cutout: patch_length must be >= 1");
  if (centers.size() != d.n) throw std::invalid_argument("cutout: one center per sample required");
  std::vector<double> out(batch.inputs.data().begin(), batch.inputs.data().end());
  for (std::size_t i = 0; i < d.n; ++i) {
    const Box box = cutout_box(d.h, d.w, patch_length, centers[i]);
    for (std::size_t ch = 0; ch < d.c; ++ch) {
      double* plane = out.data() + (i * d.c + ch) * d.h * d.w;
      for (std::size_t y = box.y0; y < box.y1; ++y)
        std::fill(plane + y * d.w + box.x0, plane + y * d.w + box.x1, 0.0);
    }
  }
  return {Tensor(batch.inputs.shape(), std::move(out)), batch.labels, batch.class_count};
}

Box cutmix_box(std::size_t height, std::size_t width, double lambda, PixelCenter center) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("cutmix: lambda outside [0, 1]");
  const double ratio = std::sqrt(1.0 - lambda);
  const long cut_h = static_cast<long>(std::floor(static_cast<double>(height) * ratio));
  const long cut_w = static_cast<long>(std::floor(static_cast<double>(width) * ratio));
  const long y0 = static_cast<long>(center.y) - cut_h / 2;
  const long x0 = static_cast<long>(center.x) - cut_w / 2;
  return clip_box(y0, y0 + cut_h, x0, x0 + cut_w, height, width);
}

CutMixResult cutmix(const Batch& batch, double alpha, Rng& rng) {
  validate_alpha(alpha, "cutmix");
  require_pairable(batch, "cutmix");
  const SpatialDims d = spatial_dims(batch, "cutmix");
  const double lambda = rng.beta(alpha, alpha);
  const auto partner = rng.permutation(d.n);
  PixelCenter center;
  center.y = rng.uniform_index(d.h);
  center.x = rng.uniform_index(d.w);
  return cutmix_with(batch, cutmix_box(d.h, d.w, lambda, center), partner);
}

CutMixResult cutmix_with(const Batch& batch, const Box& box, std::span<const std::size_t> partner) {
  require_pairable(batch, "cutmix");
  const SpatialDims d = spatial_dims(batch, "cutmix");
  validate_partner(partner, d.n);
  if (box.y0 > box.y1 || box.x0 > box.x1 || box.y1 > d.h || box.x1 > d.w) {
    throw std::invalid_argument("cutmix: box outside the image");
  }
  const auto src = batch.inputs.data();
  std::vector<double> out(src.begin(), src.end());
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t ch = 0; ch < d.c; ++ch) {
      double* dst = out.data() + (i * d.c + ch) * d.h * d.w;
      const double* other = src.data() + (partner[i] * d.c + ch) * d.h * d.w;
      for (std::size_t y = box.y0; y < box.y1; ++y)
        std::copy(other + y * d.w + box.x0, other + y * d.w + box.x1, dst + y * d.w + box.x0);
    }
  const double weight = 1.0 - static_cast<double>(box.area()) / static_cast<double>(d.h * d.w);
  Tensor labels(batch.labels.shape(), mix_rows(batch.labels.data(), batch.class_count, weight, partner));
  return {{Tensor(batch.inputs.shape(), std::move(out)), std::move(labels), batch.class_count},
          box,
          weight,
          {partner.begin(), partner.end()}};
}

Tensor dropout(const Tensor& rep, double p, Rng& rng, bool training) {
  validate_dropout(p);
  if (!training || p == 0.0) return rep;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(rep.numel());
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  return mul(rep, Tensor(rep.shape(), std::move(mask)));
}

AugmentPipeline::AugmentPipeline(AugmentSpec spec, std::uint64_t stream)
    : spec_(std::move(spec)),
      input_rng_(Rng(spec_.rng_seed).split(stream).split(1)),
      hidden_rng_(Rng(spec_.rng_seed).split(stream).split(2)) {
  spec_.validate();
}

Batch AugmentPipeline::apply_inputs(const Batch& batch) {
  Batch current = batch;
  for (const auto& t : spec_.input_transforms) {
    current = std::visit(Overloaded{
                             [&](const Mixup& m) { return mixup(current, m.alpha, input_rng_); },
                             [&](const Cutout& c) { return cutout(current, c.patch_length, input_rng_); },
                             [&](const CutMix& m) { return cutmix(current, m.alpha, input_rng_).batch; },
                             [&](const FeatureWeakenInput& f) { return feature_weaken_input(current, f.ws); },
                         },
                         t);
  }
  return current;
}

Tensor AugmentPipeline::apply_hidden(const Tensor& rep, bool training) {
  if (!training) return rep;
  Tensor current = rep;
  for (const auto& t : spec_.hidden_transforms) {
    current = std::visit(Overloaded{
                             [&](const FeatureWeakenHidden& f) { return feature_weaken_hidden(current, f.ws); },
                             [&](const Dropout& d) { return dropout(current, d.p, hidden_rng_, true); },
                         },
                         t);
  }
  return current;
}

Batch apply_pipeline(const AugmentSpec& spec, const Batch& batch) {
  return AugmentPipeline(spec).apply_inputs(batch);
}

Tensor apply_hidden(const AugmentSpec& spec, const Tensor& rep, bool training) {
  return AugmentPipeline(spec).apply_hidden(rep, training);
}

}  // namespace weakenlab
