#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool retain = false;
  bool released = false;     // history dropped by a completed backward pass
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty() && !backward; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles taking part in a reverse-mode graph.
///
/// Copies share the underlying node: a Tensor is a handle. Results of
/// differentiable kernels remember their inputs until `backward` runs, after
/// which the recorded history is released and the intermediate result can no
/// longer feed a new graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable storage. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();
  // Keep the gradient of a non-leaf tensor after backward.
  void retain_grad();
  bool is_leaf() const;
  bool released() const;

  // Fresh leaf holding a copy of the values and no history.
  Tensor detach() const;

  // Internal: construction of recorded results.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Gradients accumulate into every reachable tensor with requires_grad (so a
/// tensor used twice receives the sum of both contributions). Afterwards the
/// graph is released; a second backward through it raises UsageError.
void backward(const Tensor& loss);

}  // namespace mmet
