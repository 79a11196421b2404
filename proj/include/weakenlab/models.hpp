#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "weakenlab/tensor.hpp"

namespace weakenlab {

enum class ModelKind { mlp, small_cnn };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// Architecture description.
///
/// mlp:       flatten -> [linear + relu] per hidden width -> linear head.
///            input_shape may be any shape; its product is the input width.
/// small_cnn: [conv3x3(pad 1) + relu + maxpool2] per conv channel count (two
///            stages) -> flatten -> [linear + relu] per hidden width -> head.
///            input_shape is [C, H, W] with H and W divisible by 4.
struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  Shape input_shape;
  std::vector<std::size_t> hidden_widths;
  std::vector<std::size_t> conv_channels;
  std::size_t class_count = 10;
  bool head_bias = true;
  std::uint64_t init_seed = 0;

  // Convenience for the common [in, h1, ..., K] description.
  static ModelSpec mlp(const std::vector<std::size_t>& widths, std::uint64_t init_seed = 0);

  void validate() const;
  // Width of the representation handed to the decision layer.
  std::size_t feature_width() const;
};

// Closed form over the declared layer shapes.
std::size_t parameter_count(const ModelSpec& spec);

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// Classifier split into a feature extractor R(x) and a linear decision layer.
/// Copies share parameter storage; clone() makes an independent model.
class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }

  // x: [N, ...input_shape] (mlp accepts any trailing shape of the right size).
  Tensor forward_features(const Tensor& x) const;
  // rep: [N, feature_width] -> logits [N, K].
  Tensor decision(const Tensor& rep) const;
  Tensor forward(const Tensor& x) const;

  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  void zero_grad();
  Model clone() const;
  // Independent copy whose parameters do not require gradients.
  Model frozen() const;

 private:
  struct Dense {
    std::size_t weight, bias;  // indices into params_
  };
  struct Conv {
    std::size_t kernel, bias;
  };

  std::size_t add_parameter(std::string name, Tensor value);

  ModelSpec spec_;
  std::vector<NamedParameter> params_;
  std::vector<Conv> convs_;
  std::vector<Dense> hidden_;
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
};

Model build(const ModelSpec& spec);

}  // namespace weakenlab
