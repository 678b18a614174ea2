#include "mmet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "mmet/error.hpp"

namespace mmet::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

ConstMap cmap(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

const Node& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined input tensor");
  return *t.node();
}

// Builds a recorded result. The backward closure is kept only when some input
// requires a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn fn) {
  for (double v : data)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  for (const auto& in : inputs) {
    const auto& n = node_of(in, op);
    if (n.requires_grad) {
      if (n.released)
        throw UsageError(std::string(op) + ": input's history was consumed by a previous backward pass");
      needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

// Grad buffer of input i, or nullptr when it does not need one.
std::vector<double>* in_grad(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

std::size_t leading_rows(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  node_of(a, "matmul");
  node_of(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.node()->data, m, k) * cmap(b.node()->data, k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto dy = cmap(self.grad, m, n);
    if (auto* ga = in_grad(self, 0))
      mmap(*ga, m, k).noalias() += dy * cmap(self.inputs[1]->data, k, n).transpose();
    if (auto* gb = in_grad(self, 1))
      mmap(*gb, k, n).noalias() += cmap(self.inputs[0]->data, m, k).transpose() * dy;
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  node_of(x, "linear");
  node_of(w, "linear");
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.dim(0))
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
  const bool has_bias = bias.defined();
  const std::size_t k = w.dim(0), n = w.dim(1), rows = leading_rows(x.shape());
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != n))
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
  std::vector<double> out(rows * n);
  auto y = mmap(out, rows, n);
  y.noalias() = cmap(x.node()->data, rows, k) * cmap(w.node()->data, k, n);
  if (has_bias) y.rowwise() += cmap(bias.node()->data, 1, n).row(0);
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result("linear", std::move(shape), std::move(out), std::move(inputs),
                     [rows, k, n, has_bias](Node& self) {
                       auto dy = cmap(self.grad, rows, n);
                       if (auto* gx = in_grad(self, 0))
                         mmap(*gx, rows, k).noalias() +=
                             dy * cmap(self.inputs[1]->data, k, n).transpose();
                       if (auto* gw = in_grad(self, 1))
                         mmap(*gw, k, n).noalias() +=
                             cmap(self.inputs[0]->data, rows, k).transpose() * dy;
                       if (has_bias)
                         if (auto* gb = in_grad(self, 2)) {
                           // Eigen's column reduction picks its summation order by
                           // buffer alignment; a plain loop keeps runs bit-identical.
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < n; ++c)
                               (*gb)[c] += self.grad[r * n + c];
                         }
                     });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  node_of(a, "bmm");
  node_of(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1)))
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  for (std::size_t i = 0; i < batch; ++i) {
    auto am = ConstMap(ad.data() + i * m * k, m, k);
    auto y = MutMap(out.data() + i * m * n, m, n);
    if (transpose_b)
      y.noalias() = am * ConstMap(bd.data() + i * n * k, n, k).transpose();
    else
      y.noalias() = am * ConstMap(bd.data() + i * k * n, k, n);
  }
  return make_result(
      "bmm", {batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, transpose_b](Node& self) {
        auto* ga = in_grad(self, 0);
        auto* gb = in_grad(self, 1);
        const auto& ad = self.inputs[0]->data;
        const auto& bd = self.inputs[1]->data;
        for (std::size_t i = 0; i < batch; ++i) {
          auto dy = ConstMap(self.grad.data() + i * m * n, m, n);
          if (ga) {
            auto g = MutMap(ga->data() + i * m * k, m, k);
            if (transpose_b)
              g.noalias() += dy * ConstMap(bd.data() + i * n * k, n, k);
            else
              g.noalias() += dy * ConstMap(bd.data() + i * k * n, k, n).transpose();
          }
          if (gb) {
            auto am = ConstMap(ad.data() + i * m * k, m, k);
            if (transpose_b)
              MutMap(gb->data() + i * n * k, n, k).noalias() += dy.transpose() * am;
            else
              MutMap(gb->data() + i * k * n, k, n).noalias() += am.transpose() * dy;
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  node_of(a, "add");
  node_of(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t j = 0; j < 2; ++j)
      if (auto* g = in_grad(self, j))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  node_of(a, "sub");
  node_of(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = in_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  node_of(a, "mul");
  node_of(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& ad = self.inputs[0]->data;
    const auto& bd = self.inputs[1]->data;
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bd[i];
    if (auto* g = in_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * ad[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  node_of(a, "scale");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  node_of(a, "add_scalar");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + value;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  node_of(x, "add_row");
  node_of(row, "add_row");
  if (row.rank() != 1 || x.shape().back() != row.dim(0))
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not fit " +
                         shape_str(x.shape()));
  const std::size_t n = row.dim(0), rows = leading_rows(x.shape());
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.at(r * n + j) + row.at(j);
  return make_result("add_row", x.shape(), std::move(out), {x, row}, [rows, n](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = in_grad(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[r * n + j];
  });
}

Tensor relu(const Tensor& x) {
  node_of(x, "relu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.at(i));
  return make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& xd = self.inputs[0]->data;
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xd[i] > 0.0) (*g)[i] += self.grad[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  node_of(x, "gelu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(x.at(i));
  return make_result("gelu", x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& xd = self.inputs[0]->data;
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = xd[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        (*g)[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  node_of(x, "softmax");
  const auto s = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  const auto& xd = x.node()->data;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xd[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xd[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  return make_result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto* g = in_grad(self, 0);
    if (!g) return;
    const auto& y = self.data;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) {
          const auto i = base + j * s.inner;
          dot += self.grad[i] * y[i];
        }
        for (std::size_t j = 0; j < s.n; ++j) {
          const auto i = base + j * s.inner;
          (*g)[i] += y[i] * (self.grad[i] - dot);
        }
      }
  });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> key_valid) {
  node_of(x, "masked_softmax");
  if (x.rank() != 3)
    throw DimensionError("masked_softmax: expected [G, Sq, Sk], got " + shape_str(x.shape()));
  const std::size_t groups = x.dim(0), sq = x.dim(1), sk = x.dim(2);
  if (key_valid.size() != groups * sk)
    throw DimensionError("masked_softmax: key mask has " + std::to_string(key_valid.size()) +
                         " entries, expected " + std::to_string(groups * sk));
  std::vector<double> out(x.numel(), 0.0);
  const auto& xd = x.node()->data;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const auto* valid = key_valid.data() + gi * sk;
    if (std::none_of(valid, valid + sk, [](std::uint8_t v) { return v != 0; }))
      throw UsageError("masked_softmax: group " + std::to_string(gi) + " has no valid key");
    for (std::size_t q = 0; q < sq; ++q) {
      const std::size_t base = (gi * sq + q) * sk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sk; ++j)
        if (valid[j]) mx = std::max(mx, xd[base + j]);
      double total = 0.0;
      for (std::size_t j = 0; j < sk; ++j)
        if (valid[j]) {
          out[base + j] = std::exp(xd[base + j] - mx);
          total += out[base + j];
        }
      for (std::size_t j = 0; j < sk; ++j) out[base + j] /= total;
    }
  }
  const std::size_t rows = groups * sq;
  return make_result("masked_softmax", x.shape(), std::move(out), {x}, [rows, sk](Node& self) {
    auto* g = in_grad(self, 0);
    if (!g) return;
    const auto& y = self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * sk;
      double dot = 0.0;
      for (std::size_t j = 0; j < sk; ++j) dot += self.grad[base + j] * y[base + j];
      for (std::size_t j = 0; j < sk; ++j)
        (*g)[base + j] += y[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  node_of(x, "layer_norm");
  node_of(gain, "layer_norm");
  node_of(bias, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not fit " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw UsageError("layer_norm: eps must be positive");
  const std::size_t rows = leading_rows(x.shape());
  std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
  const auto& xd = x.node()->data;
  const auto& gd = gain.node()->data;
  const auto& bd = bias.node()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const auto& gd = self.inputs[1]->data;
        auto* gx = in_grad(self, 0);
        auto* gg = in_grad(self, 1);
        auto* gb = in_grad(self, 2);
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (gg)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += dy[j] * h[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += dy[j];
          if (gx) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = dy[j] * gd[j];
              mean_dh += dh;
              mean_dh_h += dh * h[j];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[r * d + j] += rstd[r] * (dy[j] * gd[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  node_of(x, "reshape");
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  return make_result("reshape", std::move(shape), x.node()->data, {x}, [](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each flat output index of the permuted tensor, the flat source index.
std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& axes) {
  const auto in_strides = strides_of(in);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in[axes[i]];
  std::vector<std::size_t> map(shape_numel(in));
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < axes.size(); ++i) src += idx[i] * in_strides[axes[i]];
    map[flat] = src;
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  node_of(x, "permute");
  const auto& in = x.shape();
  std::vector<bool> used(in.size(), false);
  if (axes.size() != in.size())
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(in));
  for (auto a : axes) {
    if (a >= in.size() || used[a]) throw DimensionError("permute: invalid axis order");
    used[a] = true;
  }
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in[axes[i]];
  auto map = permute_index(in, axes);
  std::vector<double> out(map.size());
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xd[map[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [map = std::move(map)](Node& self) {
                       if (auto* g = in_grad(self, 0))
                         for (std::size_t i = 0; i < map.size(); ++i)
                           (*g)[map[i]] += self.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  for (const auto& p : parts) node_of(p, "concat");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == shape.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (i != axis && s[i] != shape[i]) ok = false;
    if (!ok)
      throw DimensionError("concat: " + shape_str(s) + " does not fit " + shape_str(shape) +
                           " along axis " + std::to_string(axis));
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = split_axis(shape, axis, "concat");
  std::vector<std::size_t> chunk;  // contiguous block per outer index
  for (const auto& p : parts) chunk.push_back(p.dim(axis) * split.inner);
  const std::size_t row = total * split.inner;
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pd = parts[k].node()->data;
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pd.data() + o * chunk[k], chunk[k], out.data() + o * row + offset);
    offset += chunk[k];
  }
  const std::size_t outer = split.outer;
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [chunk = std::move(chunk), outer, row](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < chunk.size(); ++k) {
                         if (auto* g = in_grad(self, k))
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < chunk[k]; ++i)
                               (*g)[o * chunk[k] + i] += self.grad[o * row + offset + i];
                         offset += chunk[k];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  node_of(x, "slice");
  const auto split = split_axis(x.shape(), axis, "slice");
  if (length == 0 || start + length > split.n)
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t src_row = split.n * split.inner, dst_row = length * split.inner;
  const std::size_t off = start * split.inner;
  std::vector<double> out(split.outer * dst_row);
  const auto& xd = x.node()->data;
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(xd.data() + o * src_row + off, dst_row, out.data() + o * dst_row);
  const std::size_t outer = split.outer;
  return make_result("slice", std::move(shape), std::move(out), {x},
                     [outer, src_row, dst_row, off](Node& self) {
                       if (auto* g = in_grad(self, 0))
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < dst_row; ++i)
                             (*g)[o * src_row + off + i] += self.grad[o * dst_row + i];
                     });
}

Tensor tile(const Tensor& x, std::size_t count) {
  node_of(x, "tile");
  if (count == 0) throw UsageError("tile: count must be positive");
  Shape shape{count};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.numel();
  std::vector<double> out(count * n);
  for (std::size_t c = 0; c < count; ++c)
    std::copy_n(x.node()->data.data(), n, out.data() + c * n);
  return make_result("tile", std::move(shape), std::move(out), {x}, [count, n](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t c = 0; c < count; ++c)
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[c * n + i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  node_of(table, "gather_rows");
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D");
  if (indices.empty()) throw UsageError("gather_rows: no indices");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows)
      throw UsageError("gather_rows: index " + std::to_string(idx[i]) + " out of range " +
                       std::to_string(rows));
    std::copy_n(table.node()->data.data() + idx[i] * d, d, out.data() + i * d);
  }
  const std::size_t k = idx.size();
  return make_result("gather_rows", {k, d}, std::move(out), {table},
                     [idx = std::move(idx), d](Node& self) {
                       if (auto* g = in_grad(self, 0))
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < d; ++j)
                             (*g)[idx[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor replace_rows(const Tensor& x, std::span<const std::size_t> indices, const Tensor& row) {
  node_of(x, "replace_rows");
  node_of(row, "replace_rows");
  if (x.rank() != 2 || row.shape() != Shape{x.dim(1)})
    throw DimensionError("replace_rows: row " + shape_str(row.shape()) + " does not fit " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::unordered_set<std::size_t> seen;
  std::vector<double> out = x.node()->data;
  for (auto i : idx) {
    if (i >= n) throw UsageError("replace_rows: index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw UsageError("replace_rows: duplicate index " + std::to_string(i));
    std::copy_n(row.node()->data.data(), d, out.data() + i * d);
  }
  return make_result("replace_rows", x.shape(), std::move(out), {x, row},
                     [idx = std::move(idx), d](Node& self) {
                       if (auto* g = in_grad(self, 0)) {
                         std::vector<double> dy = self.grad;
                         for (auto i : idx) std::fill_n(dy.data() + i * d, d, 0.0);
                         for (std::size_t i = 0; i < dy.size(); ++i) (*g)[i] += dy[i];
                       }
                       if (auto* g = in_grad(self, 1))
                         for (auto i : idx)
                           for (std::size_t j = 0; j < d; ++j) (*g)[j] += self.grad[i * d + j];
                     });
}

Tensor gather_elements(const Tensor& mat, std::span<const std::size_t> rows,
                       std::span<const std::size_t> cols) {
  node_of(mat, "gather_elements");
  if (mat.rank() != 2) throw DimensionError("gather_elements: matrix must be 2-D");
  if (rows.size() != cols.size() || rows.empty())
    throw UsageError("gather_elements: row/column index lists must be nonempty and equal length");
  const std::size_t r = mat.dim(0), c = mat.dim(1);
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r || cols[i] >= c) throw UsageError("gather_elements: index out of range");
    flat[i] = rows[i] * c + cols[i];
    out[i] = mat.at(flat[i]);
  }
  const std::size_t k = flat.size();
  return make_result("gather_elements", {k}, std::move(out), {mat},
                     [flat = std::move(flat)](Node& self) {
                       if (auto* g = in_grad(self, 0))
                         for (std::size_t i = 0; i < flat.size(); ++i)
                           (*g)[flat[i]] += self.grad[i];
                     });
}

Tensor sum(const Tensor& x) {
  node_of(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {x}, [](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  node_of(x, "mean");
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_result("mean", {1}, {s * inv}, {x}, [inv](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (auto& v : *g) v += self.grad[0] * inv;
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  node_of(x, "mean_axis");
  const auto s = split_axis(x.shape(), axis, "mean_axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto& xd = x.node()->data;
  const double inv = 1.0 / static_cast<double>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.n + j) * s.inner + i] * inv;
  return make_result("mean_axis", std::move(shape), std::move(out), {x}, [s, inv](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.n; ++j)
          for (std::size_t i = 0; i < s.inner; ++i)
            (*g)[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i] * inv;
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  node_of(logits, "cross_entropy");
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B, N]");
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  if (labels.size() != b)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  std::vector<double> prob(b * n);
  const auto& z = logits.node()->data;
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (lab[i] >= n)
      throw UsageError("cross_entropy: label " + std::to_string(lab[i]) + " outside [0, " +
                       std::to_string(n) + ")");
    const double* row = z.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      prob[i * n + j] = std::exp(row[j] - mx);
      total += prob[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) prob[i * n + j] /= total;
    loss += (mx + std::log(total)) - row[lab[i]];
  }
  loss /= static_cast<double>(b);
  return make_result("cross_entropy", {1}, {loss}, {logits},
                     [b, n, lab = std::move(lab), prob = std::move(prob)](Node& self) {
                       auto* g = in_grad(self, 0);
                       if (!g) return;
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           (*g)[i * n + j] += s * (prob[i * n + j] - (j == lab[i] ? 1.0 : 0.0));
                     });
}

Tensor mse(const Tensor& pred, std::span<const double> target) {
  node_of(pred, "mse");
  if (target.size() != pred.numel())
    throw DimensionError("mse: " + std::to_string(target.size()) + " targets for prediction " +
                         shape_str(pred.shape()));
  std::vector<double> diff(pred.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = pred.at(i) - target[i];
    s += diff[i] * diff[i];
  }
  const double inv = 1.0 / static_cast<double>(diff.size());
  return make_result("mse", {1}, {s * inv}, {pred}, [inv, diff = std::move(diff)](Node& self) {
    if (auto* g = in_grad(self, 0))
      for (std::size_t i = 0; i < diff.size(); ++i) (*g)[i] += self.grad[0] * 2.0 * inv * diff[i];
  });
}

Tensor pairwise_distance(const Tensor& x) {
  node_of(x, "pairwise_distance");
  if (x.rank() != 2) throw DimensionError("pairwise_distance: expected [B, d]");
  const std::size_t b = x.dim(0), d = x.dim(1);
  const auto& xd = x.node()->data;
  std::vector<double> out(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = xd[i * d + k] - xd[j * d + k];
        s += t * t;
      }
      out[i * b + j] = out[j * b + i] = std::sqrt(s);
    }
  return make_result("pairwise_distance", {b, b}, std::move(out), {x}, [b, d](Node& self) {
    auto* g = in_grad(self, 0);
    if (!g) return;
    const auto& xd = self.inputs[0]->data;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const double dist = self.data[i * b + j];
        const double w = self.grad[i * b + j];
        // Zero distance has no direction; use the zero subgradient.
        if (i == j || dist == 0.0 || w == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double t = w * (xd[i * d + k] - xd[j * d + k]) / dist;
          (*g)[i * d + k] += t;
          (*g)[j * d + k] -= t;
        }
      }
  });
}

}  // namespace mmet::ops
