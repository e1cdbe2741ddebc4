#include "samdetr/nn.hpp"

#include <cmath>
#include <numbers>

#include "samdetr/ops.hpp"

namespace samdetr {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor& ParameterSet::add(std::string name, Tensor value, double lr_scale) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  value.impl()->requires_grad = true;
  entries_.push_back(Parameter{std::move(name), std::move(value), lr_scale});
  return entries_.back().value;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   double lr_scale) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Linear layer;
  layer.weight = params.add(name + ".weight", uniform_tensor({in, out}, bound, rng), lr_scale);
  layer.bias = params.add(name + ".bias", Tensor::zeros({out}), lr_scale);
  return layer;
}

Tensor linear(const Tensor& x, const Linear& layer) {
  const std::size_t in = layer.in_features();
  if (x.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(in));
  }
  if (x.rank() == 2) return add_bias(matmul(x, layer.weight), layer.bias);
  Shape out_shape = x.shape();
  out_shape.back() = layer.out_features();
  Tensor flat = reshape(x, {x.numel() / in, in});
  return reshape(add_bias(matmul(flat, layer.weight), layer.bias), out_shape);
}

Mlp make_mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims, Rng& rng,
             double lr_scale) {
  if (dims.size() < 2) throw ContractError("make_mlp: need at least input and output dims");
  Mlp net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    net.layers.push_back(make_linear(params, name + "." + std::to_string(i), dims[i], dims[i + 1], rng, lr_scale));
  }
  return net;
}

Tensor mlp(const Tensor& x, const Mlp& net) {
  Tensor h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (i > 0 && h.shape().back() != net.layers[i].in_features()) {
      throw DimensionError("mlp: layer " + std::to_string(i) + " does not chain");
    }
    h = linear(h, net.layers[i]);
    if (i + 1 < net.layers.size()) h = relu(h);
  }
  return h;
}

LayerNormParams make_layer_norm(ParameterSet& params, const std::string& name, std::size_t dim) {
  LayerNormParams p;
  p.gamma = params.add(name + ".gamma", Tensor::full({dim}, 1.0));
  p.beta = params.add(name + ".beta", Tensor::zeros({dim}));
  return p;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gamma, p.beta); }

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::size_t padding, Rng& rng, double lr_scale) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * k * k));
  ConvLayer layer;
  layer.kernels = params.add(name + ".weight", uniform_tensor({cout, cin, k, k}, bound, rng), lr_scale);
  layer.bias = params.add(name + ".bias", Tensor::zeros({cout}), lr_scale);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor conv(const Tensor& x, const ConvLayer& layer) {
  return conv2d(x, layer.kernels, layer.bias, layer.stride, layer.padding);
}

void AttentionParams::validate() const {
  const std::size_t d = w_q.dim(0);
  for (const Tensor* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (w->shape() != Shape{d, d}) {
      throw DimensionError("attention projections must be square " + shape_str({d, d}) + ", got " +
                           shape_str(w->shape()));
    }
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: model dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
}

AttentionParams make_attention(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                               Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim));
  AttentionParams p;
  p.w_q = params.add(name + ".w_q", uniform_tensor({dim, dim}, bound, rng));
  p.w_k = params.add(name + ".w_k", uniform_tensor({dim, dim}, bound, rng));
  p.w_v = params.add(name + ".w_v", uniform_tensor({dim, dim}, bound, rng));
  p.w_o = params.add(name + ".w_o", uniform_tensor({dim, dim}, bound, rng));
  p.heads = heads;
  p.validate();
  return p;
}

AttentionResult multi_head_attention(const Tensor& q, const Tensor& q_pos, const Tensor& k, const Tensor& k_pos,
                                     const Tensor& v, const AttentionParams& params, const std::optional<Tensor>& bias) {
  params.validate();
  const std::size_t d = params.model_dim();
  const std::size_t m = params.heads;
  const std::size_t dh = params.head_dim();
  for (const Tensor* t : {&q, &q_pos, &k, &k_pos, &v}) {
    if (t->rank() != 2 || t->dim(1) != d) {
      throw DimensionError("attention: operand " + shape_str(t->shape()) + " does not have model dim " +
                           std::to_string(d));
    }
  }
  const std::size_t n = q.dim(0), s = k.dim(0);
  if (q_pos.dim(0) != n || k_pos.dim(0) != s || v.dim(0) != s) {
    throw DimensionError("attention: sequence lengths disagree among q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  if (bias && bias->shape() != Shape{m, n, s}) {
    throw DimensionError("attention: bias " + shape_str(bias->shape()) + " expected " + shape_str({m, n, s}));
  }
  auto split_heads = [&](const Tensor& x, std::size_t len) {
    return permute(reshape(x, {len, m, dh}), {1, 0, 2});  // [M x len x dh]
  };
  Tensor qh = split_heads(matmul(add(q, q_pos), params.w_q), n);
  Tensor kh = split_heads(matmul(add(k, k_pos), params.w_k), s);
  Tensor vh = split_heads(matmul(v, params.w_v), s);
  Tensor logits = scale(bmm(qh, kh, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (bias) logits = add(logits, *bias);
  Tensor weights = softmax(logits, 2);
  Tensor heads_out = bmm(weights, vh);  // [M x N x dh]
  Tensor merged = reshape(permute(heads_out, {1, 0, 2}), {n, d});
  return AttentionResult{matmul(merged, params.w_o), weights};
}

namespace {

double frequency_divisor(std::size_t i, std::size_t dim) {
  return std::pow(kSinusoidTemperature, 4.0 * static_cast<double>(i) / static_cast<double>(dim));
}

void require_embed_dim(std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) {
    throw DimensionError("sinusoidal embedding dim must be a positive multiple of 4, got " + std::to_string(dim));
  }
}

}  // namespace

Tensor sinusoidal_embed_2d(double x, double y, std::size_t dim) {
  return reshape(sinusoidal_embed_points(Tensor::from({1, 2}, {x, y}), dim), {dim});
}

Tensor sinusoidal_embed_points(const Tensor& coords, std::size_t dim) {
  require_embed_dim(dim);
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw DimensionError("sinusoidal_embed_points: expected [K x 2] coordinates, got " + shape_str(coords.shape()));
  }
  const std::size_t rows = coords.dim(0);
  const std::size_t freqs = dim / 4;
  const std::size_t half = dim / 2;
  std::vector<double> omega(freqs);
  for (std::size_t i = 0; i < freqs; ++i) omega[i] = 2.0 * std::numbers::pi / frequency_divisor(i, dim);
  Tensor out = Tensor::zeros({rows, dim});
  auto od = out.mutable_data();
  const auto cd = coords.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t axis = 0; axis < 2; ++axis) {
      const double c = cd[r * 2 + axis];
      for (std::size_t i = 0; i < freqs; ++i) {
        const double a = c * omega[i];
        od[r * dim + axis * half + 2 * i] = std::sin(a);
        od[r * dim + axis * half + 2 * i + 1] = std::cos(a);
      }
    }
  }
  TensorImpl* ci = coords.impl().get();
  detail::record({&coords}, out, [ci, rows, dim, freqs, half, omega](TensorImpl& oi) {
    ci->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t axis = 0; axis < 2; ++axis) {
        double acc = 0.0;
        for (std::size_t i = 0; i < freqs; ++i) {
          const std::size_t s = r * dim + axis * half + 2 * i;
          // d sin = w cos, d cos = -w sin
          acc += omega[i] * (oi.grad[s] * oi.data[s + 1] - oi.grad[s + 1] * oi.data[s]);
        }
        ci->grad[r * 2 + axis] += acc;
      }
    }
  });
  return out;
}

Tensor focal_loss(const Tensor& logits, const std::vector<int>& targets, const FocalParams& params) {
  if (logits.rank() != 2) throw DimensionError("focal_loss: logits must be [N x C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) {
    throw DimensionError("focal_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " queries");
  }
  for (int t : targets) {
    if (t != kNoObject && (t < 0 || static_cast<std::size_t>(t) >= c)) {
      throw ContractError("focal_loss: target class " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
  }
  const double gamma = params.gamma;
  std::vector<double> dlogit(n * c);
  double total = 0.0;
  const auto xd = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double x = xd[i * c + j];
      const bool positive = targets[i] == static_cast<int>(j);
      // z is the logit of p_t, so log p_t = -softplus(-z) and 1 - p_t = sigmoid(-z).
      const double z = positive ? x : -x;
      const double log_pt = -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
      const double pt = std::exp(log_pt);
      const double one_minus_pt = z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
      const double alpha_t = params.use_alpha ? (positive ? params.alpha : 1.0 - params.alpha) : 1.0;
      const double modulator = gamma == 0.0 ? 1.0 : std::pow(one_minus_pt, gamma);
      total += -alpha_t * modulator * log_pt;
      // dFL/dz = -alpha_t (1-p_t)^gamma [(1 - p_t) - gamma p_t log p_t]
      const double dz = -alpha_t * modulator * (one_minus_pt - gamma * pt * log_pt);
      dlogit[i * c + j] = positive ? dz : -dz;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor out = Tensor::scalar(total * inv_n);
  TensorImpl* li = logits.impl().get();
  detail::record({&logits}, out, [li, inv_n, dlogit = std::move(dlogit)](TensorImpl& oi) {
    li->ensure_grad();
    for (std::size_t i = 0; i < dlogit.size(); ++i) li->grad[i] += oi.grad[0] * inv_n * dlogit[i];
  });
  return out;
}

}  // namespace samdetr
