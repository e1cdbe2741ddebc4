#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "samdetr/rng.hpp"
#include "samdetr/tensor.hpp"

namespace samdetr {

/// A named trainable tensor. `lr_scale` multiplies the optimizer learning rate.
struct Parameter {
  std::string name;
  Tensor value;
  double lr_scale = 1.0;
};

/// Ordered registry of the trainable tensors of a model.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value, double lr_scale = 1.0);
  std::vector<Parameter>& entries() { return entries_; }
  const std::vector<Parameter>& entries() const { return entries_; }
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> entries_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

/// Xavier-uniform weights and zero bias, registered as `<name>.weight` / `<name>.bias`.
Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   double lr_scale = 1.0);

/// x . W + b over the trailing axis of x.
Tensor linear(const Tensor& x, const Linear& layer);

struct Mlp {
  std::vector<Linear> layers;  // relu between layers, none after the last
};

Mlp make_mlp(ParameterSet& params, const std::string& name, const std::vector<std::size_t>& dims, Rng& rng,
             double lr_scale = 1.0);
Tensor mlp(const Tensor& x, const Mlp& net);

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

LayerNormParams make_layer_norm(ParameterSet& params, const std::string& name, std::size_t dim);
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

/// Conv kernel [C_out x C_in x k x k] with He-uniform init and zero bias.
struct ConvLayer {
  Tensor kernels;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

ConvLayer make_conv(ParameterSet& params, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                    std::size_t stride, std::size_t padding, Rng& rng, double lr_scale = 1.0);
Tensor conv(const Tensor& x, const ConvLayer& layer);

// Multi-head attention ------------------------------------------------------

struct AttentionParams {
  Tensor w_q;  // [d x d]
  Tensor w_k;
  Tensor w_v;
  Tensor w_o;
  std::size_t heads = 1;

  std::size_t model_dim() const { return w_q.dim(0); }
  std::size_t head_dim() const { return model_dim() / heads; }
  /// Throws DimensionError unless all projections are d x d and heads divides d.
  void validate() const;
};

AttentionParams make_attention(ParameterSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                               Rng& rng);

struct AttentionResult {
  Tensor out;      // [N x d]
  Tensor weights;  // [heads x N x S]
};

/// Scaled dot-product attention with per-head softmax over key positions.
/// Position embeddings are added to queries and keys before projection, never
/// to values. An optional `bias` [heads x N x S] is added to the logits.
AttentionResult multi_head_attention(const Tensor& q, const Tensor& q_pos, const Tensor& k, const Tensor& k_pos,
                                     const Tensor& v, const AttentionParams& params,
                                     const std::optional<Tensor>& bias = std::nullopt);

// Sinusoidal position embeddings ---------------------------------------------

inline constexpr double kSinusoidTemperature = 10000.0;

/// Embedding of a normalised 2D coordinate: x half then y half; inside each
/// half slot 2i = sin(2*pi*c / T^(4i/d)) and slot 2i+1 = cos(...).
Tensor sinusoidal_embed_2d(double x, double y, std::size_t dim);

/// Row-wise differentiable embedding of coordinates [K x 2] -> [K x dim].
Tensor sinusoidal_embed_points(const Tensor& coords, std::size_t dim);

// Sigmoid focal loss -----------------------------------------------------------

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  /// When false the alpha_t class weighting is disabled.
  bool use_alpha = true;
};

inline constexpr int kNoObject = -1;

/// Mean over queries of the per-class sigmoid focal loss. `targets[i]` is a
/// class index or kNoObject (all-zero target row).
Tensor focal_loss(const Tensor& logits, const std::vector<int>& targets, const FocalParams& params = {});

}  // namespace samdetr
