#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "samdetr/rng.hpp"
#include "samdetr/tensor.hpp"

namespace samdetr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Analytic gradient of the scalar f() with respect to x, via a fresh graph.
inline std::vector<double> analytic_grad(const std::function<Tensor()>& f, Tensor& x) {
  Graph g;
  GraphScope scope(g);
  x.zero_grad();
  Tensor y = f();
  backward(y);
  auto gr = x.grad();
  return {gr.begin(), gr.end()};
}

// Plain central differences, no graph.
inline std::vector<double> numeric_grad(const std::function<Tensor()>& f, Tensor& x, double h = 1e-5) {
  std::vector<double> out(x.numel());
  auto d = x.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double keep = d[i];
    d[i] = keep + h;
    const double up = f().item();
    d[i] = keep - h;
    const double down = f().item();
    d[i] = keep;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), floor}));
  }
  return worst;
}

}  // namespace samdetr::testing
