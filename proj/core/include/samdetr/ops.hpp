#pragma once

#include <cstddef>
#include <vector>

#include "samdetr/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops require identical
// shapes; the only implicit broadcast is scalar * tensor through scale().

namespace samdetr {

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product: [B x m x k] * [B x k x n] -> [B x m x n]. With
/// `transpose_b` the right operand is read as [B x n x k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

/// Adds `bias` (length = trailing dim of x) to every trailing-dim row of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Layer normalisation over the trailing axis with affine gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Cross-correlation. Input [C_in x H x W] or batched [B x C_in x H x W],
/// kernels [C_out x C_in x k x k] with k odd, optional bias [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride,
              std::size_t padding);
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding);

// Structural.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
/// Rows of a tensor selected along axis 0 (repeats allowed).
Tensor index_select(const Tensor& x, const std::vector<std::size_t>& rows);
/// Mean along `axis`; the axis is removed (rank-1 inputs reduce to [1]).
Tensor reduce_mean(const Tensor& x, std::size_t axis);
/// Max along `axis`; gradient goes to the first maximal index.
Tensor reduce_max(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace samdetr
