#include "weakenlab/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace weakenlab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::from_impl(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) {
    throw std::logic_error("requires_grad can only be changed on leaf tensors");
  }
  impl_->requires_grad = value;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

bool Tensor::has_grad() const { return impl_->grad.has_value(); }

std::span<const double> Tensor::grad() const {
  if (!impl_->grad) {
    throw std::logic_error("tensor has no gradient; run backward() first");
  }
  return *impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::clear_grad() { impl_->grad.reset(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root.impl();
  std::unordered_set<const detail::TensorImpl*> visited;
  // Iterative post-order DFS: (node, next input index).
  std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
  if (tape.root_->node) {
    stack.emplace_back(tape.root_, 0);
    visited.insert(tape.root_.get());
  }
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& inputs = impl->node->inputs;
    if (next < inputs.size()) {
      const auto& input = inputs[next++];
      if (input->node && input->requires_grad && visited.insert(input.get()).second) {
        stack.emplace_back(input, 0);
      }
      continue;
    }
    tape.entries_.push_back(impl);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward() {
  std::unordered_map<const detail::TensorImpl*, std::vector<double>> buffers;

  if (entries_.empty()) {
    // Root is itself a leaf.
    if (root_->requires_grad) {
      if (!root_->grad) root_->grad.emplace(root_->data.size(), 0.0);
      (*root_->grad)[0] += 1.0;
    }
    return;
  }

  buffers[root_.get()] = std::vector<double>(root_->data.size(), 1.0);

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const auto& impl = *it;
    auto found = buffers.find(impl.get());
    if (found == buffers.end()) continue;
    const std::vector<double> grad_out = std::move(found->second);
    buffers.erase(found);

    const auto& node = *impl->node;
    detail::GradSlots slots(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto& input = node.inputs[i];
      if (!input->requires_grad) continue;
      if (input->node) {
        auto& buf = buffers[input.get()];
        if (buf.empty()) buf.assign(input->data.size(), 0.0);
        slots[i] = buf.data();
      } else {
        if (!input->grad) input->grad.emplace(input->data.size(), 0.0);
        slots[i] = input->grad->data();
      }
    }
    node.backward(grad_out, slots);
  }

  for (const auto& impl : entries_) impl->node.reset();
  entries_.clear();
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a tensor that is not connected to any gradient input");
  }
  Tape::record(loss).backward();
}

}  // namespace weakenlab
