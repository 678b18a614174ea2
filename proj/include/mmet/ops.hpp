#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmet/tensor.hpp"

// Differentiable kernels. Every kernel checks its output for NaN/Inf and
// raises NumericError naming itself when one appears.
namespace mmet::ops {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., k] * w[k, n] (+ bias[n]) -> [..., n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});
// Batched product: [B,m,k] x [B,k,n], or [B,m,k] x [B,n,k]^T when transpose_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// x[..., n] + row[n] broadcast over the leading axes.
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor relu(const Tensor& x);
// Tanh approximation.
Tensor gelu(const Tensor& x);
double gelu_value(double x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Softmax over the last axis of x[G, Sq, Sk] restricted to valid keys.
// key_valid holds G*Sk flags; invalid keys get probability exactly 0.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_valid);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
// Stacks `count` copies of x along a new leading axis.
Tensor tile(const Tensor& x, std::size_t count);

// Embedding lookup / row gather: table[N, d], indices -> [k, d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
// Copy of x[N, d] with the listed rows replaced by row[d].
Tensor replace_rows(const Tensor& x, std::span<const std::size_t> indices,
                    const Tensor& row);
// Picks mat[rows[i], cols[i]] into a vector.
Tensor gather_elements(const Tensor& mat, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Mean over rows of -log softmax(logits[i])[labels[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
// Mean of (pred - target)^2 over every element.
Tensor mse(const Tensor& pred, std::span<const double> target);
// Pairwise Euclidean distances between the rows of x[B, d] -> [B, B].
Tensor pairwise_distance(const Tensor& x);

}  // namespace mmet::ops
