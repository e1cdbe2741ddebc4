#include "samdetr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace samdetr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const std::vector<double>& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(std::vector<double>& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MutMap(v.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor make(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Unary elementwise op; `df(x, y)` is dy/dx given input x and output y.
template <class F, class D>
Tensor unary(const Tensor& x, F f, D df) {
  Tensor out = make(x.shape());
  const auto& xd = x.impl()->data;
  auto& yd = out.impl()->data;
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = f(xd[i]);
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, df](TensorImpl& o) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < o.data.size(); ++i) xi->grad[i] += o.grad[i] * df(xi->data[i], o.data[i]);
  });
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make({m, n});
  mmap(out.impl()->data, 0, m, n).noalias() = cmap(a.impl()->data, 0, m, k) * cmap(b.impl()->data, 0, k, n);
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi, m, k, n](TensorImpl& o) {
    auto dc = cmap(o.grad, 0, m, n);
    if (ai->requires_grad) {
      ai->ensure_grad();
      mmap(ai->grad, 0, m, k).noalias() += dc * cmap(bi->data, 0, k, n).transpose();
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      mmap(bi->grad, 0, k, n).noalias() += cmap(ai->data, 0, m, k).transpose() * dc;
    }
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  Tensor out = make({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    auto c = mmap(out.impl()->data, i * m * n, m, n);
    auto am = cmap(a.impl()->data, i * m * k, m, k);
    if (transpose_b) {
      c.noalias() = am * cmap(b.impl()->data, i * n * k, n, k).transpose();
    } else {
      c.noalias() = am * cmap(b.impl()->data, i * k * n, k, n);
    }
  }
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi, batch, m, k, n, transpose_b](TensorImpl& o) {
    if (ai->requires_grad) ai->ensure_grad();
    if (bi->requires_grad) bi->ensure_grad();
    for (std::size_t i = 0; i < batch; ++i) {
      auto dc = cmap(o.grad, i * m * n, m, n);
      auto am = cmap(ai->data, i * m * k, m, k);
      if (transpose_b) {
        auto bm = cmap(bi->data, i * n * k, n, k);
        if (ai->requires_grad) mmap(ai->grad, i * m * k, m, k).noalias() += dc * bm;
        if (bi->requires_grad) mmap(bi->grad, i * n * k, n, k).noalias() += dc.transpose() * am;
      } else {
        auto bm = cmap(bi->data, i * k * n, k, n);
        if (ai->requires_grad) mmap(ai->grad, i * m * k, m, k).noalias() += dc * bm.transpose();
        if (bi->requires_grad) mmap(bi->grad, i * k * n, k, n).noalias() += am.transpose() * dc;
      }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make(a.shape());
  auto& o = out.impl()->data;
  const auto& ad = a.impl()->data;
  const auto& bd = b.impl()->data;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] + bd[i];
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi](TensorImpl& out_impl) {
    for (TensorImpl* t : {ai, bi}) {
      if (!t->requires_grad) continue;
      t->ensure_grad();
      for (std::size_t i = 0; i < out_impl.grad.size(); ++i) t->grad[i] += out_impl.grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = make(a.shape());
  auto& o = out.impl()->data;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.impl()->data[i] - b.impl()->data[i];
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi](TensorImpl& oi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) ai->grad[i] += oi.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) bi->grad[i] -= oi.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make(a.shape());
  auto& o = out.impl()->data;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.impl()->data[i] * b.impl()->data[i];
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi](TensorImpl& oi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) ai->grad[i] += oi.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) bi->grad[i] += oi.grad[i] * ai->data[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = make(a.shape());
  auto& o = out.impl()->data;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.impl()->data[i] / b.impl()->data[i];
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi](TensorImpl& oi) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) ai->grad[i] += oi.grad[i] / bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) bi->grad[i] -= oi.grad[i] * oi.data[i] / bi->data[i];
    }
  });
  return out;
}

namespace {

// Elementwise select between two tensors; ties pick the left operand.
Tensor select_extreme(const Tensor& a, const Tensor& b, bool take_min, const char* name) {
  require_same_shape(a, b, name);
  Tensor out = make(a.shape());
  const std::size_t n = a.numel();
  std::vector<char> from_a(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = a.impl()->data[i], y = b.impl()->data[i];
    from_a[i] = take_min ? (x <= y) : (x >= y);
    out.impl()->data[i] = from_a[i] ? x : y;
  }
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();
  detail::record({&a, &b}, out, [ai, bi, from_a = std::move(from_a)](TensorImpl& oi) {
    if (ai->requires_grad) ai->ensure_grad();
    if (bi->requires_grad) bi->ensure_grad();
    for (std::size_t i = 0; i < oi.grad.size(); ++i) {
      TensorImpl* target = from_a[i] ? ai : bi;
      if (target->requires_grad) target->grad[i] += oi.grad[i];
    }
  });
  return out;
}

}  // namespace

Tensor minimum(const Tensor& a, const Tensor& b) { return select_extreme(a, b, true, "minimum"); }
Tensor maximum(const Tensor& a, const Tensor& b) { return select_extreme(a, b, false, "maximum"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match trailing dim of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = x.numel() / n;
  Tensor out = make(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.impl()->data[r * n + c] = x.impl()->data[r * n + c] + bias.impl()->data[c];
  }
  TensorImpl* xi = x.impl().get();
  TensorImpl* bi = bias.impl().get();
  detail::record({&x, &bias}, out, [xi, bi, rows, n](TensorImpl& oi) {
    if (xi->requires_grad) {
      xi->ensure_grad();
      for (std::size_t i = 0; i < oi.grad.size(); ++i) xi->grad[i] += oi.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) bi->grad[c] += oi.grad[r * n + c];
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = make(x.shape());
  const auto& xd = x.impl()->data;
  auto& yd = out.impl()->data;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = xd[base];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xd[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        double e = std::exp(xd[base + k * s.inner] - mx);
        yd[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) yd[base + k * s.inner] /= total;
    }
  }
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, s](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.extent * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += oi.grad[base + k * s.inner] * oi.data[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t idx = base + k * s.inner;
          xi->grad[idx] += oi.data[idx] * (oi.grad[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.shape().back();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  Tensor out = make(x.shape());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto& xd = x.impl()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xd[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      double d = xd[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      double h = (xd[r * n + c] - mu) * inv_std[r];
      xhat[r * n + c] = h;
      out.impl()->data[r * n + c] = h * gamma.impl()->data[c] + beta.impl()->data[c];
    }
  }
  TensorImpl* xi = x.impl().get();
  TensorImpl* gi = gamma.impl().get();
  TensorImpl* bi = beta.impl().get();
  detail::record({&x, &gamma, &beta}, out,
                 [xi, gi, bi, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& oi) {
                   if (gi->requires_grad) gi->ensure_grad();
                   if (bi->requires_grad) bi->ensure_grad();
                   if (xi->requires_grad) xi->ensure_grad();
                   const double inv_n = 1.0 / static_cast<double>(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_dh = 0.0, mean_dh_h = 0.0;
                     for (std::size_t c = 0; c < n; ++c) {
                       const std::size_t i = r * n + c;
                       if (gi->requires_grad) gi->grad[c] += oi.grad[i] * xhat[i];
                       if (bi->requires_grad) bi->grad[c] += oi.grad[i];
                       double dh = oi.grad[i] * gi->data[c];
                       mean_dh += dh;
                       mean_dh_h += dh * xhat[i];
                     }
                     if (!xi->requires_grad) continue;
                     mean_dh *= inv_n;
                     mean_dh_h *= inv_n;
                     for (std::size_t c = 0; c < n; ++c) {
                       const std::size_t i = r * n + c;
                       double dh = oi.grad[i] * gi->data[c];
                       xi->grad[i] += inv_std[r] * (dh - mean_dh - xhat[i] * mean_dh_h);
                     }
                   }
                 });
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  return conv2d(input, kernels, Tensor(), stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const bool batched = input.rank() == 4;
  if ((input.rank() != 3 && !batched) || kernels.rank() != 4) {
    throw DimensionError("conv2d: expected [C,H,W] or [B,C,H,W] input and [Co,Ci,k,k] kernels, got " +
                         shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
  }
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? input.dim(0) : 1;
  const std::size_t cin = input.dim(off), h = input.dim(off + 1), w = input.dim(off + 2);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != cin || kernels.dim(3) != k) {
    throw DimensionError("conv2d: kernels " + shape_str(kernels.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const std::size_t patch = cin * k * k;
  const std::size_t spatial = ho * wo;
  const std::size_t cols_n = batch * spatial;

  // Column matrix [patch x (batch*spatial)]; -1 marks zero padding.
  std::vector<std::ptrdiff_t> src(patch * cols_n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t row = (c * k + ky) * k + kx;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              std::ptrdiff_t idx = -1;
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix < static_cast<std::ptrdiff_t>(w)) {
                idx = static_cast<std::ptrdiff_t>(((b * cin + c) * h + static_cast<std::size_t>(iy)) * w +
                                                  static_cast<std::size_t>(ix));
              }
              src[row * cols_n + b * spatial + oy * wo + ox] = idx;
            }
          }
        }
      }
    }
  }
  std::vector<double> cols(patch * cols_n);
  const auto& xd = input.impl()->data;
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = src[i] < 0 ? 0.0 : xd[static_cast<std::size_t>(src[i])];

  std::vector<double> prod(cout * cols_n);
  mmap(prod, 0, cout, cols_n).noalias() = cmap(kernels.impl()->data, 0, cout, patch) * cmap(cols, 0, patch, cols_n);

  Shape out_shape = batched ? Shape{batch, cout, ho, wo} : Shape{cout, ho, wo};
  Tensor out = make(out_shape);
  auto& od = out.impl()->data;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double bv = bias.defined() ? bias.impl()->data[co] : 0.0;
      for (std::size_t s = 0; s < spatial; ++s) od[(b * cout + co) * spatial + s] = prod[co * cols_n + b * spatial + s] + bv;
    }
  }

  std::vector<Tensor> inputs{input, kernels};
  if (bias.defined()) inputs.push_back(bias);
  TensorImpl* xi = input.impl().get();
  TensorImpl* ki = kernels.impl().get();
  TensorImpl* bi = bias.defined() ? bias.impl().get() : nullptr;
  detail::record(inputs, out,
                 [xi, ki, bi, batch, cout, spatial, patch, cols_n, src = std::move(src),
                  cols = std::move(cols)](TensorImpl& oi) {
                   std::vector<double> dprod(cout * cols_n);
                   for (std::size_t b = 0; b < batch; ++b) {
                     for (std::size_t co = 0; co < cout; ++co) {
                       for (std::size_t s = 0; s < spatial; ++s) {
                         dprod[co * cols_n + b * spatial + s] = oi.grad[(b * cout + co) * spatial + s];
                       }
                     }
                   }
                   if (bi != nullptr && bi->requires_grad) {
                     bi->ensure_grad();
                     for (std::size_t co = 0; co < cout; ++co) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < cols_n; ++j) acc += dprod[co * cols_n + j];
                       bi->grad[co] += acc;
                     }
                   }
                   if (ki->requires_grad) {
                     ki->ensure_grad();
                     mmap(ki->grad, 0, cout, patch).noalias() +=
                         cmap(dprod, 0, cout, cols_n) * cmap(cols, 0, patch, cols_n).transpose();
                   }
                   if (xi->requires_grad) {
                     xi->ensure_grad();
                     std::vector<double> dcols(patch * cols_n);
                     mmap(dcols, 0, patch, cols_n).noalias() =
                         cmap(ki->data, 0, cout, patch).transpose() * cmap(dprod, 0, cout, cols_n);
                     for (std::size_t i = 0; i < dcols.size(); ++i) {
                       if (src[i] >= 0) xi->grad[static_cast<std::size_t>(src[i])] += dcols[i];
                     }
                   }
                 });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  require_axis(parts.front(), axis, "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw DimensionError("concat: incompatible shapes " + shape_str(p.shape()) + " and " + shape_str(ref));
      }
    }
    total += p.shape()[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit s = split_at(out_shape, axis);
  Tensor out = make(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[axis] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.impl()->data.begin() + static_cast<std::ptrdiff_t>(o * len), len,
                  out.impl()->data.begin() + static_cast<std::ptrdiff_t>(o * total * s.inner + offset * s.inner));
    }
    offset += p.shape()[axis];
  }
  std::vector<TensorImpl*> impls;
  for (const auto& p : parts) impls.push_back(p.impl().get());
  detail::record(parts, out, [impls, offsets, s, total, axis](TensorImpl& oi) {
    for (std::size_t pi = 0; pi < impls.size(); ++pi) {
      TensorImpl* t = impls[pi];
      if (!t->requires_grad) continue;
      t->ensure_grad();
      const std::size_t len = t->shape[axis] * s.inner;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < len; ++j) t->grad[o * len + j] += oi.grad[o * total * s.inner + offsets[pi] * s.inner + j];
      }
    }
  });
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis(x, axis, "slice");
  if (begin >= end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t len = (end - begin) * s.inner;
  Tensor out = make(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.impl()->data.begin() + static_cast<std::ptrdiff_t>(o * s.extent * s.inner + begin * s.inner), len,
                out.impl()->data.begin() + static_cast<std::ptrdiff_t>(o * len));
  }
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, s, begin, len](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < len; ++j) xi->grad[o * s.extent * s.inner + begin * s.inner + j] += oi.grad[o * len + j];
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), x.impl()->data);
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < oi.grad.size(); ++i) xi->grad[i] += oi.grad[i];
  });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute: order length does not match rank of " + shape_str(x.shape()));
  std::vector<char> seen(r, 0);
  for (auto a : order) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis order for " + shape_str(x.shape()));
    seen[a] = 1;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[order[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];
  // Source offset for every destination element.
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out = make(out_shape);
  for (std::size_t i = 0; i < n; ++i) out.impl()->data[i] = x.impl()->data[src[i]];
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, src = std::move(src)](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) xi->grad[src[i]] += oi.grad[i];
  });
  return out;
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  require_axis(x, axis_a, "transpose");
  require_axis(x, axis_b, "transpose");
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw DimensionError("index_select: empty row list");
  const std::size_t n0 = x.dim(0);
  const std::size_t row_len = x.numel() / n0;
  for (auto r : rows) {
    if (r >= n0) throw DimensionError("index_select: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor out = make(out_shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.impl()->data.begin() + static_cast<std::ptrdiff_t>(rows[i] * row_len), row_len,
                out.impl()->data.begin() + static_cast<std::ptrdiff_t>(i * row_len));
  }
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, rows, row_len](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < row_len; ++j) xi->grad[rows[i] * row_len + j] += oi.grad[i * row_len + j];
    }
  });
  return out;
}

Tensor reduce_mean(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "reduce_mean");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = make(drop_axis(x.shape(), axis));
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) acc += x.impl()->data[(o * s.extent + k) * s.inner + in];
      out.impl()->data[o * s.inner + in] = acc * inv;
    }
  }
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, s, inv](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        for (std::size_t in = 0; in < s.inner; ++in) xi->grad[(o * s.extent + k) * s.inner + in] += oi.grad[o * s.inner + in] * inv;
      }
    }
  });
  return out;
}

Tensor reduce_max(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "reduce_max");
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor out = make(drop_axis(x.shape(), axis));
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = (o * s.extent) * s.inner + in;
      for (std::size_t k = 1; k < s.extent; ++k) {
        const std::size_t idx = (o * s.extent + k) * s.inner + in;
        if (x.impl()->data[idx] > x.impl()->data[best]) best = idx;
      }
      arg[o * s.inner + in] = best;
      out.impl()->data[o * s.inner + in] = x.impl()->data[best];
    }
  }
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi, arg = std::move(arg)](TensorImpl& oi) {
    xi->ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) xi->grad[arg[i]] += oi.grad[i];
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make({1});
  double acc = 0.0;
  for (double v : x.impl()->data) acc += v;
  out.impl()->data[0] = acc;
  TensorImpl* xi = x.impl().get();
  detail::record({&x}, out, [xi](TensorImpl& oi) {
    xi->ensure_grad();
    for (auto& g : xi->grad) g += oi.grad[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace samdetr
