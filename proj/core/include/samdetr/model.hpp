#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "samdetr/aligner.hpp"
#include "samdetr/features.hpp"
#include "samdetr/nn.hpp"

namespace samdetr {

enum class Variant {
  kBaseline,  // plain cross-attention, queries enter unchanged
  kSam,       // semantics aligner ahead of cross-attention
  kSamSmca,   // aligner plus Gaussian attention bias around salient points
};

const char* to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 8;
  std::size_t queries = 16;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t classes = 3;
  std::size_t image_size = 64;
  std::size_t stride = 8;
  std::size_t ffn_multiplier = 4;
  std::size_t point_conv_channels = 16;
  Variant variant = Variant::kSam;
  AlignerConfig aligner;  // heads is kept equal to `heads`

  std::size_t feature_size() const { return image_size / stride; }
  /// Throws ContractError describing the first violated constraint.
  void validate() const;
};

/// Predictions of one decoder layer plus the diagnostics it produced.
struct LayerPrediction {
  Tensor logits;             // [N x C]
  Tensor boxes;              // [N x 4] cxcywh in (0,1)
  Tensor attention;          // cross-attention weights [M x N x HW]
  std::optional<SalientPoints> points;
  std::optional<Tensor> smca_bias;

  std::vector<Box> box_values() const;
};

struct DetectionOutput {
  std::vector<LayerPrediction> layers;
  Tensor reference_boxes;  // [N x 4]

  const LayerPrediction& final_layer() const { return layers.back(); }
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  Linear ffn1;
  Linear ffn2;
  LayerNormParams norm2;
};

struct SmcaParams {
  Linear scale;  // pooled RoI features [d] -> per-head scale logits [M]
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  std::optional<AlignerParams> aligner;
  std::optional<SmcaParams> smca;
  AttentionParams cross_attn;
  LayerNormParams norm2;
  Linear ffn1;
  Linear ffn2;
  LayerNormParams norm3;
};

struct HeadParams {
  Linear classifier;  // d -> C
  Mlp box;            // d -> d -> d -> 4
};

/// Toy SAM-DETR style detector with all of its parameters.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  EncodedFeatures encode(const Tensor& image) const;
  DetectionOutput forward(const Tensor& image) const;

  const std::vector<DecoderLayerParams>& decoder() const { return decoder_; }
  const HeadParams& head_for_layer(std::size_t layer) const;
  const Tensor& reference_box_logits() const { return ref_box_logits_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::vector<ConvLayer> backbone_;
  std::vector<EncoderLayerParams> encoder_;
  std::vector<DecoderLayerParams> decoder_;
  HeadParams aux_head_;
  HeadParams final_head_;
  Tensor ref_box_logits_;
  Tensor pos2d_;  // [HW x d]
};

/// 2D sinusoidal embeddings of the pixel centres of an H x W map, [H x W x d].
Tensor position_grid(std::size_t height, std::size_t width, std::size_t dim);

struct DecoderStep {
  Tensor q;
  LayerPrediction prediction;
};

/// One decoder layer: self-attention, optional aligner, cross-attention (with
/// optional SMCA bias), FFN; each sub-block residual + post-norm. Predictions
/// are made with `head` relative to the reference boxes.
DecoderStep decoder_layer(const EncodedFeatures& encoded, const QuerySet& queries, const DecoderLayerParams& layer,
                          const HeadParams& head, const ModelConfig& config);

struct HeadOutput {
  Tensor logits;  // [N x C]
  Tensor boxes;   // [N x 4]
};

/// Class logits and boxes sigmoid(ref_logit + delta) per coordinate.
HeadOutput predict_heads(const Tensor& q, const Tensor& ref_box_logits, const HeadParams& head);

/// Gaussian attention bias [M x N x HW]: -((x-cx)^2 + (y-cy)^2) / (2 s^2) over
/// the pixel centres of an H x W map, with centres [N x M x 2] and scales
/// [N x M] (both differentiable).
Tensor gaussian_bias(const Tensor& centres, const Tensor& scales, std::size_t height, std::size_t width);

/// SMCA bias: centres are the salient points, per-head scales come from
/// softplus(linear(mean-pooled RoI features)).
Tensor smca_bias(const SalientPoints& points, const RegionFeatures& region, const SmcaParams& params,
                 std::size_t height, std::size_t width);

}  // namespace samdetr
