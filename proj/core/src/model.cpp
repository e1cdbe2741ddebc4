#include "samdetr/model.hpp"

#include <cmath>

#include "samdetr/ops.hpp"

namespace samdetr {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kSam: return "sam";
    case Variant::kSamSmca: return "sam-smca";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "sam") return Variant::kSam;
  if (name == "sam-smca") return Variant::kSamSmca;
  throw std::invalid_argument("unknown variant '" + name + "' (expected baseline|sam|sam-smca)");
}

void ModelConfig::validate() const {
  if (heads == 0 || dim % heads != 0) {
    throw ContractError("model dim " + std::to_string(dim) + " must be divisible by heads " + std::to_string(heads));
  }
  if ((dim / heads) % 4 != 0) {
    throw ContractError("per-head dim " + std::to_string(dim / heads) + " must be divisible by 4");
  }
  if (decoder_layers < 1) throw ContractError("need at least one decoder layer");
  if (queries < 1 || classes < 1) throw ContractError("queries and classes must be positive");
  if (stride < 2 || (stride & (stride - 1)) != 0) {
    throw ContractError("backbone stride must be a power of two, got " + std::to_string(stride));
  }
  if (image_size % stride != 0) {
    throw ContractError("image size " + std::to_string(image_size) + " not divisible by stride " +
                        std::to_string(stride));
  }
  if (aligner.heads != heads) throw ContractError("aligner head count must equal attention heads");
  if (point_conv_channels < 1 || ffn_multiplier < 1) throw ContractError("layer widths must be positive");
}

std::vector<Box> LayerPrediction::box_values() const {
  const auto v = boxes.data();
  std::vector<Box> out(boxes.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Box{v[i * 4], v[i * 4 + 1], v[i * 4 + 2], v[i * 4 + 3]};
  return out;
}

Tensor position_grid(std::size_t height, std::size_t width, std::size_t dim) {
  std::vector<double> coords(height * width * 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      coords[(r * width + c) * 2] = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      coords[(r * width + c) * 2 + 1] = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
    }
  }
  Tensor emb = sinusoidal_embed_points(Tensor::from({height * width, 2}, std::move(coords)), dim);
  return reshape(emb, {height, width, dim});
}

namespace {

EncoderLayerParams make_encoder_layer(ParameterSet& params, const std::string& name, const ModelConfig& cfg,
                                      Rng& rng) {
  EncoderLayerParams p;
  p.self_attn = make_attention(params, name + ".self_attn", cfg.dim, cfg.heads, rng);
  p.norm1 = make_layer_norm(params, name + ".norm1", cfg.dim);
  p.ffn1 = make_linear(params, name + ".ffn1", cfg.dim, cfg.dim * cfg.ffn_multiplier, rng);
  p.ffn2 = make_linear(params, name + ".ffn2", cfg.dim * cfg.ffn_multiplier, cfg.dim, rng);
  p.norm2 = make_layer_norm(params, name + ".norm2", cfg.dim);
  return p;
}

DecoderLayerParams make_decoder_layer(ParameterSet& params, const std::string& name, const ModelConfig& cfg,
                                      Rng& rng) {
  DecoderLayerParams p;
  p.self_attn = make_attention(params, name + ".self_attn", cfg.dim, cfg.heads, rng);
  p.norm1 = make_layer_norm(params, name + ".norm1", cfg.dim);
  if (cfg.variant != Variant::kBaseline) {
    p.aligner = make_aligner(params, name + ".aligner", cfg.dim, cfg.point_conv_channels, cfg.aligner, rng);
  }
  if (cfg.variant == Variant::kSamSmca) {
    SmcaParams smca;
    smca.scale = make_linear(params, name + ".smca.scale", cfg.dim, cfg.heads, rng);
    for (double& v : smca.scale.weight.mutable_data()) v *= 0.1;
    // softplus(b) = 0.25 of the normalised image side
    const double init = std::log(std::exp(0.25) - 1.0);
    for (double& v : smca.scale.bias.mutable_data()) v = init;
    p.smca = smca;
  }
  p.cross_attn = make_attention(params, name + ".cross_attn", cfg.dim, cfg.heads, rng);
  p.norm2 = make_layer_norm(params, name + ".norm2", cfg.dim);
  p.ffn1 = make_linear(params, name + ".ffn1", cfg.dim, cfg.dim * cfg.ffn_multiplier, rng);
  p.ffn2 = make_linear(params, name + ".ffn2", cfg.dim * cfg.ffn_multiplier, cfg.dim, rng);
  p.norm3 = make_layer_norm(params, name + ".norm3", cfg.dim);
  return p;
}

HeadParams make_head(ParameterSet& params, const std::string& name, const ModelConfig& cfg, Rng& rng) {
  HeadParams h;
  h.classifier = make_linear(params, name + ".class", cfg.dim, cfg.classes, rng);
  // Focal-loss prior: initial foreground probability 0.01.
  const double prior = -std::log((1.0 - 0.01) / 0.01);
  for (double& v : h.classifier.bias.mutable_data()) v = prior;
  h.box = make_mlp(params, name + ".box", {cfg.dim, cfg.dim, cfg.dim, 4}, rng);
  for (double& v : h.box.layers.back().weight.mutable_data()) v = 0.0;
  return h;
}

Tensor initial_box_logits(std::size_t n) {
  std::size_t side = 1;
  while (side * side < n) ++side;
  const double size = 1.0 / static_cast<double>(side);
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  std::vector<double> v(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = (static_cast<double>(i % side) + 0.5) * size;
    const double cy = (static_cast<double>(i / side) + 0.5) * size;
    v[i * 4] = logit(cx);
    v[i * 4 + 1] = logit(cy);
    v[i * 4 + 2] = logit(std::min(0.9, 2.0 * size));
    v[i * 4 + 3] = logit(std::min(0.9, 2.0 * size));
  }
  return Tensor::from({n, 4}, std::move(v));
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.aligner.heads = config_.heads;
  config_.validate();
  Rng rng(seed);
  const ModelConfig& c = config_;
  std::size_t cin = 3;
  for (std::size_t s = 1, i = 0; s < c.stride; s *= 2, ++i) {
    backbone_.push_back(make_conv(params_, "backbone." + std::to_string(i), cin, c.dim, 3, 2, 1, rng, 0.1));
    cin = c.dim;
  }
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    encoder_.push_back(make_encoder_layer(params_, "encoder." + std::to_string(l), c, rng));
  }
  ref_box_logits_ = params_.add("query.ref_box_logits", initial_box_logits(c.queries));
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    decoder_.push_back(make_decoder_layer(params_, "decoder." + std::to_string(l), c, rng));
  }
  if (c.decoder_layers > 1) aux_head_ = make_head(params_, "head.aux", c, rng);
  final_head_ = make_head(params_, "head.final", c, rng);
  const std::size_t fs = c.feature_size();
  pos2d_ = reshape(position_grid(fs, fs, c.dim), {fs * fs, c.dim});
}

const HeadParams& Model::head_for_layer(std::size_t layer) const {
  return layer + 1 == config_.decoder_layers ? final_head_ : aux_head_;
}

EncodedFeatures Model::encode(const Tensor& image) const {
  const std::size_t s = config_.image_size;
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("encode: expected [3 x S x S] image, got " + shape_str(image.shape()));
  }
  if (image.dim(1) % config_.stride != 0) {
    throw ContractError("encode: image side " + std::to_string(image.dim(1)) + " not divisible by stride " +
                        std::to_string(config_.stride));
  }
  if (image.dim(1) != s) {
    throw DimensionError("encode: image side " + std::to_string(image.dim(1)) + " differs from configured " +
                         std::to_string(s));
  }
  Tensor x = image;
  for (const auto& layer : backbone_) x = relu(conv(x, layer));
  const std::size_t fs = config_.feature_size(), d = config_.dim;
  Tensor seq = reshape(permute(x, {1, 2, 0}), {fs * fs, d});
  for (const auto& layer : encoder_) {
    auto sa = multi_head_attention(seq, pos2d_, seq, pos2d_, seq, layer.self_attn);
    seq = layer_norm(add(seq, sa.out), layer.norm1);
    Tensor ff = linear(relu(linear(seq, layer.ffn1)), layer.ffn2);
    seq = layer_norm(add(seq, ff), layer.norm2);
  }
  return EncodedFeatures{reshape(seq, {fs, fs, d}), reshape(pos2d_, {fs, fs, d})};
}

HeadOutput predict_heads(const Tensor& q, const Tensor& ref_box_logits, const HeadParams& head) {
  if (ref_box_logits.rank() != 2 || ref_box_logits.dim(0) != q.dim(0) || ref_box_logits.dim(1) != 4) {
    throw DimensionError("predict_heads: reference boxes " + shape_str(ref_box_logits.shape()) +
                         " do not match queries " + shape_str(q.shape()));
  }
  Tensor logits = linear(q, head.classifier);
  Tensor delta = mlp(q, head.box);
  return HeadOutput{logits, sigmoid(add(ref_box_logits, delta))};
}

Tensor gaussian_bias(const Tensor& centres, const Tensor& scales, std::size_t height, std::size_t width) {
  if (centres.rank() != 3 || centres.dim(2) != 2 || scales.rank() != 2 || scales.dim(0) != centres.dim(0) ||
      scales.dim(1) != centres.dim(1)) {
    throw DimensionError("gaussian_bias: centres " + shape_str(centres.shape()) + " and scales " +
                         shape_str(scales.shape()) + " disagree");
  }
  const std::size_t n = centres.dim(0), m = centres.dim(1), s = height * width;
  std::vector<double> kx(s), ky(s);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      kx[r * width + c] = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
      ky[r * width + c] = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
    }
  }
  for (double v : scales.data()) {
    if (!(v > 0.0)) throw ContractError("gaussian_bias: scales must be positive");
  }
  Tensor out = Tensor::zeros({m, n, s});
  auto od = out.mutable_data();
  const auto cd = centres.data();
  const auto sd = scales.data();
  for (std::size_t h = 0; h < m; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const double cx = cd[(i * m + h) * 2], cy = cd[(i * m + h) * 2 + 1];
      const double inv = 1.0 / (2.0 * sd[i * m + h] * sd[i * m + h]);
      for (std::size_t k = 0; k < s; ++k) {
        const double dx = kx[k] - cx, dy = ky[k] - cy;
        od[(h * n + i) * s + k] = -(dx * dx + dy * dy) * inv;
      }
    }
  }
  TensorImpl* ci = centres.impl().get();
  TensorImpl* si = scales.impl().get();
  detail::record({&centres, &scales}, out, [ci, si, n, m, s, kx = std::move(kx), ky = std::move(ky)](TensorImpl& oi) {
    if (ci->requires_grad) ci->ensure_grad();
    if (si->requires_grad) si->ensure_grad();
    for (std::size_t h = 0; h < m; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = i * m + h;
        const double cx = ci->data[p * 2], cy = ci->data[p * 2 + 1], sc = si->data[p];
        const double inv_s2 = 1.0 / (sc * sc);
        double gx = 0.0, gy = 0.0, gs = 0.0;
        for (std::size_t k = 0; k < s; ++k) {
          const double g = oi.grad[(h * n + i) * s + k];
          const double dx = kx[k] - cx, dy = ky[k] - cy;
          gx += g * dx * inv_s2;
          gy += g * dy * inv_s2;
          gs += g * (dx * dx + dy * dy) * inv_s2 / sc;
        }
        if (ci->requires_grad) {
          ci->grad[p * 2] += gx;
          ci->grad[p * 2 + 1] += gy;
        }
        if (si->requires_grad) si->grad[p] += gs;
      }
    }
  });
  return out;
}

Tensor smca_bias(const SalientPoints& points, const RegionFeatures& region, const SmcaParams& params,
                 std::size_t height, std::size_t width) {
  const std::size_t n = region.count();
  Tensor pooled = reduce_mean(reshape(region.grid, {n, kRoiSize * kRoiSize, region.channels()}), 1);
  Tensor scales = softplus(linear(pooled, params.scale));
  return gaussian_bias(points.image, scales, height, width);
}

DecoderStep decoder_layer(const EncodedFeatures& encoded, const QuerySet& queries, const DecoderLayerParams& layer,
                          const HeadParams& head, const ModelConfig& config) {
  const std::size_t h = encoded.height(), w = encoded.width(), d = encoded.channels();
  Tensor keys = reshape(encoded.features, {h * w, d});
  Tensor key_pos = reshape(encoded.pos2d, {h * w, d});

  auto sa = multi_head_attention(queries.q, queries.q_pos, queries.q, queries.q_pos, queries.q, layer.self_attn);
  Tensor q = layer_norm(add(queries.q, sa.out), layer.norm1);

  Tensor q_in = q;
  Tensor q_pos_in = queries.q_pos;
  LayerPrediction pred;
  std::optional<Tensor> bias;
  if (layer.aligner) {
    QuerySet aligned_in{q, queries.q_pos, queries.box_logits, queries.boxes};
    AlignerOutput al = aligner_forward(encoded, aligned_in, *layer.aligner, config.aligner);
    q_in = al.q;
    q_pos_in = al.q_pos;
    if (layer.smca) {
      bias = smca_bias(al.points, al.region, *layer.smca, h, w);
      pred.smca_bias = bias;
    }
    pred.points = al.points;
  }
  auto ca = multi_head_attention(q_in, q_pos_in, keys, key_pos, keys, layer.cross_attn, bias);
  q = layer_norm(add(q, ca.out), layer.norm2);
  Tensor ff = linear(relu(linear(q, layer.ffn1)), layer.ffn2);
  q = layer_norm(add(q, ff), layer.norm3);

  HeadOutput heads = predict_heads(q, queries.box_logits, head);
  pred.logits = heads.logits;
  pred.boxes = heads.boxes;
  pred.attention = ca.weights;
  return DecoderStep{q, pred};
}

DetectionOutput Model::forward(const Tensor& image) const {
  EncodedFeatures encoded = encode(image);
  const std::size_t n = config_.queries, d = config_.dim;
  Tensor ref_boxes = sigmoid(ref_box_logits_);
  QuerySet queries;
  queries.q = Tensor::zeros({n, d});
  queries.q_pos = sinusoidal_embed_points(slice(ref_boxes, 1, 0, 2), d);
  queries.box_logits = ref_box_logits_;
  queries.boxes = boxes_from_logits(ref_box_logits_);
  DetectionOutput out;
  out.reference_boxes = ref_boxes;
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    DecoderStep step = decoder_layer(encoded, queries, decoder_[l], head_for_layer(l), config_);
    queries.q = step.q;
    out.layers.push_back(std::move(step.prediction));
  }
  return out;
}

}  // namespace samdetr
