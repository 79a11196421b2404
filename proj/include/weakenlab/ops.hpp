#pragma once

#include <cstddef>
#include <optional>

#include "weakenlab/tensor.hpp"

namespace weakenlab {

// Elementwise sum. `b` may equal `a` in shape, or match a trailing suffix of
// it (bias-add): the gradient for `b` is summed over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& x, double c);

// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of x[N,C,H,W] with kernel[F,C,kh,kw]; optional bias[F].
Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dGeometry geometry = {});
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              Conv2dGeometry geometry = {});

// Gradient is passed only where the input is strictly positive.
Tensor relu(const Tensor& x);

// Non-overlapping window x window pooling on [N,C,H,W]; H and W must be
// multiples of the window.
Tensor max_pool2d(const Tensor& x, std::size_t window = 2);

Tensor reshape(const Tensor& x, Shape shape);

// [N, ...] -> [N, prod(...)].
Tensor flatten(const Tensor& x);

Tensor log_softmax(const Tensor& x, std::size_t axis);

// Reductions to a scalar tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace weakenlab
