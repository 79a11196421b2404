#include "weakenlab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace weakenlab {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor probe(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  backward(f(probe));
  const std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  Tensor shifted = x.detach();
  auto values = shifted.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + step;
    const double up = f(shifted).item();
    values[i] = original - step;
    const double down = f(shifted).item();
    values[i] = original;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * step)));
  }
  return worst;
}

double grad_check_parameters(const std::function<Tensor()>& loss, std::span<Tensor> params,
                             double step) {
  for (auto& p : params) p.clear_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = loss().item();
      values[i] = original - step;
      const double down = loss().item();
      values[i] = original;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * step)));
    }
  }
  for (auto& p : params) p.clear_grad();
  return worst;
}

}  // namespace weakenlab
