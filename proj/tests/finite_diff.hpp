#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmet/rng.hpp"
#include "mmet/tensor.hpp"

namespace mmet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheckMismatch {
  std::size_t input, element;
  double analytic, numeric, relative;
};

struct GradCheckResult {
  double worst_relative = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckMismatch> mismatches;  // elements at or above the tolerance
};

// Compares backward() against central finite differences for every element of
// every input. Relative error is |a - n| / max(|a|, |n|), with an absolute
// floor so that exact zeros on both sides pass.
inline GradCheckResult finite_difference_check(const std::function<Tensor()>& f,
                                               std::vector<Tensor> inputs, double step = 1e-4,
                                               double tolerance = 1e-3) {
  for (auto& t : inputs) t.clear_grad();
  backward(f());
  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = f().item();
      data[i] = saved - step;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double diff = std::abs(numeric - analytic[i]);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
      const double rel = diff <= 1e-8 ? 0.0 : diff / scale;
      result.worst_relative = std::max(result.worst_relative, rel);
      ++result.checked;
      if (rel >= tolerance) result.mismatches.push_back({k, i, analytic[i], numeric, rel});
    }
  }
  for (auto& t : inputs) t.clear_grad();
  return result;
}

}  // namespace mmet::testing
