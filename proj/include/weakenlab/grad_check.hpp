#pragma once

#include <functional>
#include <span>

#include "weakenlab/tensor.hpp"

namespace weakenlab {

/// Max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
/// where numeric is the central difference of scalar-valued f at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

/// Same measure over every element of every parameter. `loss` closes over
/// the parameters; they are perturbed in place and restored. Existing
/// gradients on the parameters are overwritten.
double grad_check_parameters(const std::function<Tensor()>& loss, std::span<Tensor> params,
                             double step = 1e-5);

}  // namespace weakenlab
