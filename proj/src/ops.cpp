#include "weakenlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace weakenlab {

namespace {

using detail::GradSlots;
using detail::TensorImpl;
using BackwardFn = std::function<void(std::span<const double>, const GradSlots&)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  if (!tracked) return out;
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  for (const Tensor* t : inputs) node->inputs.push_back(t->impl());
  node->backward = std::move(backward);
  const auto& impl = out.impl();
  impl->requires_grad = true;
  impl->node = std::move(node);
  return out;
}

// c[m,n] += a[m,k] * b[k,n], blocked over k so a slab of b stays in cache.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  constexpr std::size_t kBlock = 64;
  for (std::size_t k0 = 0; k0 < k; k0 += kBlock) {
    const std::size_t k1 = std::min(k, k0 + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (std::size_t p = k0; p < k1; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), full.end() - static_cast<long>(suffix.size()));
}

struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, oh, ow, stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t spatial() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel, Conv2dGeometry g) {
  require_rank(x, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (g.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
             0,        0,        g.stride, g.padding};
  if (kernel.dim(1) != d.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(d.c));
  }
  if (d.kh == 0 || d.kw == 0 || d.kh > d.h + 2 * d.pad || d.kw > d.w + 2 * d.pad) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " does not fit input " +
                     shape_str(x.shape()) + " with padding " + std::to_string(d.pad));
  }
  d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
  d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
  return d;
}

// cols[(c*kh+u)*kw+v][oy*ow+ox] for one image.
void im2col(const double* img, const ConvDims& d, double* cols) {
  for (std::size_t ch = 0; ch < d.c; ++ch)
    for (std::size_t u = 0; u < d.kh; ++u)
      for (std::size_t v = 0; v < d.kw; ++v) {
        double* row = cols + ((ch * d.kh + u) * d.kw + v) * d.spatial();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + u) - static_cast<long>(d.pad);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + v) - static_cast<long>(d.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(d.h) &&
                                ix < static_cast<long>(d.w);
            row[oy * d.ow + ox] =
                inside ? img[(ch * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im_acc(const double* cols, const ConvDims& d, double* img) {
  for (std::size_t ch = 0; ch < d.c; ++ch)
    for (std::size_t u = 0; u < d.kh; ++u)
      for (std::size_t v = 0; v < d.kw; ++v) {
        const double* row = cols + ((ch * d.kh + u) * d.kw + v) * d.spatial();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + u) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + v) - static_cast<long>(d.pad);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            img[(ch * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)] +=
                row[oy * d.ow + ox];
          }
        }
      }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& kernel, const Tensor* bias, Conv2dGeometry g) {
  const ConvDims d = conv_dims(x, kernel, g);
  if (bias && (bias->rank() != 1 || bias->dim(0) != d.f)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match " +
                     std::to_string(d.f) + " filters");
  }
  const std::size_t out_plane = d.f * d.spatial();
  std::vector<double> out(d.n * out_plane, 0.0);
  std::vector<double> cols(d.patch() * d.spatial());
  const double* xd = x.data().data();
  const double* kd = kernel.data().data();
  for (std::size_t i = 0; i < d.n; ++i) {
    im2col(xd + i * d.c * d.h * d.w, d, cols.data());
    gemm_acc(kd, cols.data(), out.data() + i * out_plane, d.f, d.patch(), d.spatial());
  }
  if (bias) {
    const auto bd = bias->data();
    for (std::size_t i = 0; i < d.n; ++i)
      for (std::size_t f = 0; f < d.f; ++f) {
        double* plane = out.data() + i * out_plane + f * d.spatial();
        for (std::size_t s = 0; s < d.spatial(); ++s) plane[s] += bd[f];
      }
  }

  auto xi = x.impl();
  auto ki = kernel.impl();
  BackwardFn backward = [xi, ki, d, has_bias = bias != nullptr](std::span<const double> g_out,
                                                                const GradSlots& slots) {
    const std::size_t plane = d.f * d.spatial();
    std::vector<double> cols(d.patch() * d.spatial());
    std::vector<double> dcols(d.patch() * d.spatial());
    const std::vector<double> kt = slots[0] ? transpose(ki->data.data(), d.f, d.patch())
                                            : std::vector<double>{};
    for (std::size_t i = 0; i < d.n; ++i) {
      const double* gi = g_out.data() + i * plane;
      if (slots[1]) {
        im2col(xi->data.data() + i * d.c * d.h * d.w, d, cols.data());
        const std::vector<double> cols_t = transpose(cols.data(), d.patch(), d.spatial());
        gemm_acc(gi, cols_t.data(), slots[1], d.f, d.spatial(), d.patch());
      }
      if (slots[0]) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        gemm_acc(kt.data(), gi, dcols.data(), d.patch(), d.f, d.spatial());
        col2im_acc(dcols.data(), d, slots[0] + i * d.c * d.h * d.w);
      }
      if (has_bias && slots[2]) {
        for (std::size_t f = 0; f < d.f; ++f)
          for (std::size_t s = 0; s < d.spatial(); ++s) slots[2][f] += gi[f * d.spatial() + s];
      }
    }
  };
  Shape shape{d.n, d.f, d.oh, d.ow};
  if (bias) return make_result("conv2d", std::move(shape), std::move(out), {&x, &kernel, bias}, backward);
  return make_result("conv2d", std::move(shape), std::move(out), {&x, &kernel}, backward);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError("add: shape " + shape_str(b.shape()) + " cannot be added to " +
                     shape_str(a.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  const std::size_t nb = bd.size();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i % nb];
  return make_result("add", a.shape(), std::move(out), {&a, &b},
                     [nb](std::span<const double> g, const GradSlots& slots) {
                       if (slots[0])
                         for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i];
                       if (slots[1])
                         for (std::size_t i = 0; i < g.size(); ++i) slots[1][i % nb] += g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("mul", a.shape(), std::move(out), {&a, &b},
                     [ai, bi](std::span<const double> g, const GradSlots& slots) {
                       if (slots[0])
                         for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i] * bi->data[i];
                       if (slots[1])
                         for (std::size_t i = 0; i < g.size(); ++i) slots[1][i] += g[i] * ai->data[i];
                     });
}

Tensor scalar_mul(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scalar_mul: factor must be finite");
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * c;
  return make_result("scalar_mul", x.shape(), std::move(out), {&x},
                     [c](std::span<const double> g, const GradSlots& slots) {
                       for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i] * c;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto ai = a.impl();
  auto bi = b.impl();
  return make_result("matmul", Shape{m, n}, std::move(out), {&a, &b},
                     [ai, bi, m, k, n](std::span<const double> g, const GradSlots& slots) {
                       if (slots[0]) {
                         const auto bt = transpose(bi->data.data(), k, n);
                         gemm_acc(g.data(), bt.data(), slots[0], m, n, k);
                       }
                       if (slots[1]) {
                         const auto at = transpose(ai->data.data(), m, k);
                         gemm_acc(at.data(), g.data(), slots[1], k, m, n);
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dGeometry geometry) {
  return conv2d_impl(x, kernel, nullptr, geometry);
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Conv2dGeometry geometry) {
  return conv2d_impl(x, kernel, &bias, geometry);
}

Tensor relu(const Tensor& x) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  auto xi = x.impl();
  return make_result("relu", x.shape(), std::move(out), {&x},
                     [xi](std::span<const double> g, const GradSlots& slots) {
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xi->data[i] > 0.0) slots[0][i] += g[i];
                     });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ShapeError("max_pool2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of window " + std::to_string(window));
  }
  const std::size_t oh = h / window, ow = w / window;
  const auto xd = x.data();
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * window * w + ox * window;
        for (std::size_t u = 0; u < window; ++u)
          for (std::size_t v = 0; v < window; ++v) {
            const std::size_t idx = base + (oy * window + u) * w + ox * window + v;
            if (xd[idx] > xd[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = xd[best];
        argmax[o] = best;
      }
  }
  return make_result("max_pool2d", Shape{n, c, oh, ow}, std::move(out), {&x},
                     [argmax = std::move(argmax)](std::span<const double> g, const GradSlots& slots) {
                       for (std::size_t i = 0; i < g.size(); ++i) slots[0][argmax[i]] += g[i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x},
                     [](std::span<const double> g, const GradSlots& slots) {
                       for (std::size_t i = 0; i < g.size(); ++i) slots[0][i] += g[i];
                     });
}

Tensor Tensor::reshape(Shape shape) const { return weakenlab::reshape(*this, std::move(shape)); }

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = x.dim(0);
  return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("log_softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const auto& s = x.shape();
  const std::size_t len = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<long>(axis) + 1, s.end()));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<long>(axis)));
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  std::vector<double> probs(xd.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) total += std::exp(xd[base + j * inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = base + j * inner;
        out[idx] = xd[idx] - lse;
        probs[idx] = std::exp(out[idx]);
      }
    }
  return make_result(
      "log_softmax", s, std::move(out), {&x},
      [probs = std::move(probs), outer, inner, len](std::span<const double> g, const GradSlots& slots) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double gsum = 0.0;
            for (std::size_t j = 0; j < len; ++j) gsum += g[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              slots[0][idx] += g[idx] - probs[idx] * gsum;
            }
          }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", Shape{}, {total}, {&x},
                     [n = x.numel()](std::span<const double> g, const GradSlots& slots) {
                       for (std::size_t i = 0; i < n; ++i) slots[0][i] += g[0];
                     });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scalar_mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace weakenlab
