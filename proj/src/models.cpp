#include "weakenlab/models.hpp"

#include <cmath>
#include <stdexcept>

#include "weakenlab/ops.hpp"
#include "weakenlab/rng.hpp"

namespace weakenlab {

namespace {

constexpr std::size_t kConvKernel = 3;

std::size_t conv_output_width(const ModelSpec& spec) {
  const std::size_t h = spec.input_shape[1] / 4, w = spec.input_shape[2] / 4;
  return spec.conv_channels.back() * h * w;
}

// Width entering the first dense layer.
std::size_t dense_input_width(const ModelSpec& spec) {
  return spec.kind == ModelKind::mlp ? shape_numel(spec.input_shape) : conv_output_width(spec);
}

Tensor kaiming_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::mlp ? "mlp" : "small_cnn";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mlp") return ModelKind::mlp;
  if (name == "small_cnn") return ModelKind::small_cnn;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

ModelSpec ModelSpec::mlp(const std::vector<std::size_t>& widths, std::uint64_t init_seed) {
  if (widths.size() < 2) throw std::invalid_argument("mlp widths need at least [input, classes]");
  ModelSpec spec;
  spec.kind = ModelKind::mlp;
  spec.input_shape = {widths.front()};
  spec.hidden_widths.assign(widths.begin() + 1, widths.end() - 1);
  spec.class_count = widths.back();
  spec.init_seed = init_seed;
  return spec;
}

void ModelSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("model needs at least 2 classes");
  if (input_shape.empty() || shape_numel(input_shape) == 0) {
    throw std::invalid_argument("model input shape must be non-empty, got " + shape_str(input_shape));
  }
  for (std::size_t w : hidden_widths)
    if (w < 1) throw std::invalid_argument("hidden widths must be >= 1");
  if (kind == ModelKind::small_cnn) {
    if (input_shape.size() != 3) {
      throw std::invalid_argument("small_cnn input shape must be [C,H,W], got " + shape_str(input_shape));
    }
    if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) {
      throw std::invalid_argument("small_cnn needs H and W divisible by 4, got " + shape_str(input_shape));
    }
    if (conv_channels.size() != 2) throw std::invalid_argument("small_cnn needs exactly two conv channel counts");
    for (std::size_t c : conv_channels)
      if (c < 1) throw std::invalid_argument("conv channel counts must be >= 1");
  }
}

std::size_t ModelSpec::feature_width() const {
  return hidden_widths.empty() ? dense_input_width(*this) : hidden_widths.back();
}

std::size_t parameter_count(const ModelSpec& spec) {
  spec.validate();
  std::size_t total = 0;
  if (spec.kind == ModelKind::small_cnn) {
    std::size_t in = spec.input_shape[0];
    for (std::size_t c : spec.conv_channels) {
      total += c * in * kConvKernel * kConvKernel + c;
      in = c;
    }
  }
  std::size_t in = dense_input_width(spec);
  for (std::size_t w : spec.hidden_widths) {
    total += in * w + w;
    in = w;
  }
  total += in * spec.class_count + (spec.head_bias ? spec.class_count : 0);
  return total;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(spec_.init_seed);
  if (spec_.kind == ModelKind::small_cnn) {
    std::size_t in = spec_.input_shape[0];
    for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      const std::size_t out = spec_.conv_channels[i];
      const std::string prefix = "conv" + std::to_string(i + 1);
      Conv conv;
      conv.kernel = add_parameter(prefix + ".weight",
                                  kaiming_uniform(rng, {out, in, kConvKernel, kConvKernel},
                                                  in * kConvKernel * kConvKernel));
      conv.bias = add_parameter(prefix + ".bias", Tensor::zeros({out}, true));
      convs_.push_back(conv);
      in = out;
    }
  }
  std::size_t in = dense_input_width(spec_);
  for (std::size_t i = 0; i < spec_.hidden_widths.size(); ++i) {
    const std::size_t out = spec_.hidden_widths[i];
    const std::string prefix = "fc" + std::to_string(i + 1);
    Dense dense;
    dense.weight = add_parameter(prefix + ".weight", kaiming_uniform(rng, {in, out}, in));
    dense.bias = add_parameter(prefix + ".bias", Tensor::zeros({out}, true));
    hidden_.push_back(dense);
    in = out;
  }
  head_weight_ = add_parameter("head.weight", kaiming_uniform(rng, {in, spec_.class_count}, in));
  if (spec_.head_bias) head_bias_ = add_parameter("head.bias", Tensor::zeros({spec_.class_count}, true));
}

std::size_t Model::add_parameter(std::string name, Tensor value) {
  for (const auto& p : params_)
    if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

Tensor Model::forward_features(const Tensor& x) const {
  if (x.rank() < 2) throw ShapeError("model input must be batched, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  Tensor h;
  if (spec_.kind == ModelKind::mlp) {
    const Shape trailing(x.shape().begin() + 1, x.shape().end());
    if (shape_numel(trailing) != shape_numel(spec_.input_shape)) {
      throw ShapeError("mlp expects samples of " + std::to_string(shape_numel(spec_.input_shape)) +
                       " values, got " + shape_str(x.shape()));
    }
    h = x.rank() == 2 ? x : reshape(x, {n, shape_numel(trailing)});
  } else {
    Shape expected{n};
    expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
    if (x.shape() != expected) {
      throw ShapeError("small_cnn expects input " + shape_str(expected) + ", got " + shape_str(x.shape()));
    }
    h = x;
    for (const Conv& conv : convs_) {
      h = max_pool2d(relu(conv2d(h, params_[conv.kernel].value, params_[conv.bias].value, {1, 1})), 2);
    }
    h = flatten(h);
  }
  for (const Dense& dense : hidden_) {
    h = relu(add(matmul(h, params_[dense.weight].value), params_[dense.bias].value));
  }
  return h;
}

Tensor Model::decision(const Tensor& rep) const {
  if (rep.rank() != 2 || rep.dim(1) != spec_.feature_width()) {
    throw ShapeError("decision layer expects [N," + std::to_string(spec_.feature_width()) + "], got " +
                     shape_str(rep.shape()));
  }
  Tensor logits = matmul(rep, params_[head_weight_].value);
  if (spec_.head_bias) logits = add(logits, params_[head_bias_].value);
  return logits;
}

Tensor Model::forward(const Tensor& x) const { return decision(forward_features(x)); }

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

Tensor& Model::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.clear_grad();
}

Model Model::clone() const {
  Model copy = *this;
  for (auto& p : copy.params_) p.value = Tensor(p.value.shape(), {p.value.data().begin(), p.value.data().end()}, true);
  return copy;
}

Model Model::frozen() const {
  Model copy = *this;
  for (auto& p : copy.params_) p.value = p.value.detach();
  return copy;
}

Model build(const ModelSpec& spec) { return Model(spec); }

}  // namespace weakenlab
