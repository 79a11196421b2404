#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace weakenlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any geometry problem: mismatched operands, bad ranks, invalid
/// convolution/pooling windows.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  // Producer of this tensor; null for leaves and after the tape is released.
  std::shared_ptr<Node> node;
};

using GradSlots = std::vector<double*>;

struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives the output gradient and accumulates into one slot per input.
  // A slot is null when that input does not require a gradient.
  std::function<void(std::span<const double> grad_out, const GradSlots& grad_in)> backward;
};

}  // namespace detail

/// Dense row-major float64 tensor handle. Copies share storage; use detach()
/// for an independent copy. Ops record themselves on a define-by-run graph
/// whenever any operand requires a gradient.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Untracked in-place access, for optimizers and test perturbation.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  Tensor detach() const;
  Tensor reshape(Shape shape) const;

  // Internal plumbing for ops and the tape.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Topologically ordered record of the graph reachable from a root tensor.
/// Every node appears after the nodes that produced its inputs.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  std::span<const std::shared_ptr<detail::TensorImpl>> entries() const { return entries_; }

  // Runs the reverse sweep seeded with d(root)/d(root) = 1, accumulating into
  // leaf gradients, then releases the graph.
  void backward();

 private:
  std::shared_ptr<detail::TensorImpl> root_;
  std::vector<std::shared_ptr<detail::TensorImpl>> entries_;
};

/// Populates grad for every requires_grad leaf reachable from `loss`.
/// Gradients accumulate additively across calls until cleared.
void backward(const Tensor& loss);

}  // namespace weakenlab
