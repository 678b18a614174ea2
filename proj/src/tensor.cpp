#include "mmet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "mmet/error.hpp"

namespace mmet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape, std::size_t size) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
  if (shape_numel(shape) != size)
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(size) + " values");
}

const detail::Node& deref(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw UsageError("use of an undefined tensor");
  return *n;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(node_).data.size(); }

std::span<const double> Tensor::data() const { return deref(node_).data; }

std::span<double> Tensor::mutable_data() {
  deref(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1)
    throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }
bool Tensor::has_grad() const { return !deref(node_).grad.empty(); }
std::span<const double> Tensor::grad() const { return deref(node_).grad; }

void Tensor::zero_grad() {
  deref(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  deref(node_);
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

void Tensor::retain_grad() {
  deref(node_);
  node_->retain = true;
}

bool Tensor::is_leaf() const { return deref(node_).is_leaf(); }
bool Tensor::released() const { return deref(node_).released; }

Tensor Tensor::detach() const {
  return from(shape(), deref(node_).data, false);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined tensor");
  if (loss.numel() != 1)
    throw UsageError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  auto root = loss.node();
  if (root->released)
    throw UsageError("backward through a graph that was already consumed by a previous backward pass");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        if (child->released)
          throw UsageError(std::string("graph reuses a '") + child->op +
                           "' result whose history was consumed by a previous backward pass");
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }

  for (auto* node : order) {
    if (node->is_leaf()) continue;
    node->backward = nullptr;
    node->inputs.clear();
    node->released = true;
    if (!node->retain) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace mmet
