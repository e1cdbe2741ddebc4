#include "samdetr/aligner.hpp"

#include <cmath>

#include "samdetr/ops.hpp"

namespace samdetr {

std::vector<Box> boxes_from_logits(const Tensor& box_logits) {
  if (box_logits.rank() != 2 || box_logits.dim(1) != 4) {
    throw DimensionError("reference box logits must be [N x 4], got " + shape_str(box_logits.shape()));
  }
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  std::vector<Box> boxes(box_logits.dim(0));
  const auto d = box_logits.data();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    boxes[i] = Box{sig(d[i * 4]), sig(d[i * 4 + 1]), sig(d[i * 4 + 2]), sig(d[i * 4 + 3])};
  }
  return boxes;
}

const char* to_string(ResampleStrategy s) {
  switch (s) {
    case ResampleStrategy::kAvg: return "avg";
    case ResampleStrategy::kMax: return "max";
    case ResampleStrategy::kSp1: return "sp1";
    case ResampleStrategy::kSpm: return "spm";
  }
  return "?";
}

const char* to_string(SearchRange r) { return r == SearchRange::kWithinBox ? "box" : "image"; }

ResampleStrategy parse_strategy(const std::string& name) {
  if (name == "avg") return ResampleStrategy::kAvg;
  if (name == "max") return ResampleStrategy::kMax;
  if (name == "sp1") return ResampleStrategy::kSp1;
  if (name == "spm") return ResampleStrategy::kSpm;
  throw std::invalid_argument("unknown resample strategy '" + name + "' (expected avg|max|sp1|spm)");
}

SearchRange parse_search_range(const std::string& name) {
  if (name == "box") return SearchRange::kWithinBox;
  if (name == "image") return SearchRange::kWithinImage;
  throw std::invalid_argument("unknown search range '" + name + "' (expected box|image)");
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// Initial point layout: the eight outer cells of a 3x3 lattice over the box,
// cycling when more heads are requested. A single point starts at the centre.
std::vector<double> initial_point_bias(std::size_t points) {
  static constexpr double kLattice[8][2] = {{0.25, 0.25}, {0.5, 0.25}, {0.75, 0.25}, {0.25, 0.5},
                                            {0.75, 0.5},  {0.25, 0.75}, {0.5, 0.75}, {0.75, 0.75}};
  std::vector<double> bias(points * 2, 0.0);
  if (points == 1) return bias;
  for (std::size_t p = 0; p < points; ++p) {
    bias[p * 2] = logit(kLattice[p % 8][0]);
    bias[p * 2 + 1] = logit(kLattice[p % 8][1]);
  }
  return bias;
}

}  // namespace

AlignerParams make_aligner(ParameterSet& params, const std::string& name, std::size_t dim,
                           std::size_t conv_channels, const AlignerConfig& config, Rng& rng) {
  if (config.heads == 0 || dim % config.heads != 0) {
    throw DimensionError("aligner: dim " + std::to_string(dim) + " not divisible by " + std::to_string(config.heads) +
                         " heads");
  }
  const std::size_t slice = dim / config.heads;
  AlignerParams p;
  if (config.uses_points()) {
    p.point_conv1 = make_conv(params, name + ".point_conv1", dim, conv_channels, 3, 1, 1, rng);
    p.point_conv2 = make_conv(params, name + ".point_conv2", conv_channels, conv_channels, 3, 1, 1, rng);
    p.point_reduce = make_conv(params, name + ".point_reduce", conv_channels, slice, 1, 1, 0, rng);
    const std::size_t outputs = 2 * config.predicted_points();
    p.point_mlp = make_mlp(params, name + ".point_mlp", {kRoiSize * kRoiSize * slice, dim, outputs}, rng);
    // Start with small offsets around a fixed spread of points.
    for (double& v : p.point_mlp.layers.back().weight.mutable_data()) v *= 0.01;
    auto bias = initial_point_bias(config.predicted_points());
    std::copy(bias.begin(), bias.end(), p.point_mlp.layers.back().bias.mutable_data().begin());
    p.value_reduce = make_linear(params, name + ".value_reduce", dim, slice, rng);
  }
  if (config.reweight) {
    const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim));
    Tensor w1 = Tensor::zeros({dim, dim});
    Tensor w2 = Tensor::zeros({dim, dim});
    for (double& v : w1.mutable_data()) v = rng.uniform(-bound, bound);
    for (double& v : w2.mutable_data()) v = rng.uniform(-bound, bound);
    p.w_rw1 = params.add(name + ".w_rw1", w1);
    p.w_rw2 = params.add(name + ".w_rw2", w2);
  }
  return p;
}

namespace {

// Per-query affine map from box-relative to image coordinates, laid out like
// an [N x M x 2] point tensor.
struct BoxFrames {
  Tensor scale;
  Tensor offset;
};

BoxFrames box_frames(const std::vector<Box>& boxes, std::size_t per_query) {
  const std::size_t n = boxes.size();
  std::vector<double> sc(n * per_query * 2), off(n * per_query * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const Corners c = clip_to_image(boxes[i]);
    for (std::size_t m = 0; m < per_query; ++m) {
      const std::size_t k = (i * per_query + m) * 2;
      sc[k] = c.width();
      sc[k + 1] = c.height();
      off[k] = c.x1;
      off[k + 1] = c.y1;
    }
  }
  return BoxFrames{Tensor::from({n, per_query, 2}, std::move(sc)), Tensor::from({n, per_query, 2}, std::move(off))};
}

Tensor replicate_points(const Tensor& points, std::size_t copies) {
  if (copies == 1) return points;
  return concat(std::vector<Tensor>(copies, points), 1);
}

}  // namespace

SalientPoints predict_salient_points(const RegionFeatures& region, const AlignerParams& params,
                                     const AlignerConfig& config) {
  const std::size_t n = region.count();
  const std::size_t m = config.heads;
  const BoxFrames frames = box_frames(region.boxes, m);
  SalientPoints out;
  out.range = config.search_range;
  if (!config.uses_points()) {
    out.box_relative = Tensor::full({n, m, 2}, 0.5);
    out.image = add(mul(out.box_relative, frames.scale), frames.offset);
    return out;
  }
  Tensor x = permute(region.grid, {0, 3, 1, 2});  // [N x d x 7 x 7]
  x = relu(conv(x, params.point_conv1));
  x = relu(conv(x, params.point_conv2));
  x = relu(conv(x, params.point_reduce));
  const std::size_t flat = x.numel() / n;
  Tensor logits = mlp(reshape(x, {n, flat}), params.point_mlp);
  const std::size_t predicted = config.predicted_points();
  Tensor unit = replicate_points(sigmoid(reshape(logits, {n, predicted, 2})), m / predicted);
  if (config.search_range == SearchRange::kWithinBox) {
    out.box_relative = unit;
    out.image = add(mul(unit, frames.scale), frames.offset);
  } else {
    out.image = unit;
    out.box_relative = div(sub(unit, frames.offset), frames.scale);
  }
  return out;
}

Tensor resample_queries(const RegionFeatures& region, const RegionFeatures& reduced, const SalientPoints& points,
                        const AlignerConfig& config, const std::optional<Tensor>& reduced_map) {
  const std::size_t n = region.count();
  switch (config.strategy) {
    case ResampleStrategy::kAvg:
    case ResampleStrategy::kMax: {
      Tensor flat = reshape(region.grid, {n, kRoiSize * kRoiSize, region.channels()});
      return config.strategy == ResampleStrategy::kAvg ? reduce_mean(flat, 1) : reduce_max(flat, 1);
    }
    case ResampleStrategy::kSp1:
    case ResampleStrategy::kSpm:
      break;
  }
  const std::size_t m = config.heads;
  if (points.per_query() != m || points.count() != n) {
    throw ContractError("resample_queries: " + std::string(to_string(config.strategy)) + " expects [" +
                        std::to_string(n) + " x " + std::to_string(m) + "] points, got " +
                        shape_str(points.box_relative.shape()));
  }
  const std::size_t used = config.strategy == ResampleStrategy::kSpm ? m : 1;
  Tensor sampled;
  if (config.search_range == SearchRange::kWithinImage) {
    if (!reduced_map) throw ContractError("resample_queries: within-image search needs the reduced feature map");
    const Tensor& src = used == m ? points.image : slice(points.image, 1, 0, 1);
    sampled = sample_feature_map(*reduced_map, src);
  } else {
    const Tensor& src = used == m ? points.box_relative : slice(points.box_relative, 1, 0, 1);
    sampled = bilinear_point_sample(reduced, src);
  }
  sampled = replicate_points(sampled, m / used);  // [N x M x d/M]
  return reshape(sampled, {n, m * sampled.dim(2)});
}

Tensor make_position_embeddings(const SalientPoints& points, std::size_t dim) {
  const std::size_t n = points.count(), m = points.per_query();
  if (dim % m != 0) throw DimensionError("position embeddings: dim not divisible by point count");
  Tensor flat = reshape(points.image, {n * m, 2});
  return reshape(sinusoidal_embed_points(flat, dim / m), {n, dim});
}

Reweighted reweight(const Tensor& q_new, const Tensor& q_pos, const Tensor& q_prev, const AlignerParams& params) {
  if (q_new.shape() != q_prev.shape() || q_pos.shape() != q_prev.shape()) {
    throw DimensionError("reweight: shapes " + shape_str(q_new.shape()) + ", " + shape_str(q_pos.shape()) + ", " +
                         shape_str(q_prev.shape()) + " differ");
  }
  return Reweighted{mul(q_new, sigmoid(matmul(q_prev, params.w_rw1))),
                    mul(q_pos, sigmoid(matmul(q_prev, params.w_rw2)))};
}

AlignerOutput aligner_forward(const EncodedFeatures& encoded, const QuerySet& queries, const AlignerParams& params,
                              const AlignerConfig& config) {
  const std::size_t dim = encoded.channels();
  AlignerOutput out;
  out.region = roi_align(encoded.features, queries.boxes);
  std::optional<Tensor> reduced_map;
  if (config.uses_points()) {
    out.reduced = RegionFeatures{linear(out.region.grid, params.value_reduce), out.region.boxes};
    if (config.search_range == SearchRange::kWithinImage) reduced_map = linear(encoded.features, params.value_reduce);
  }
  out.points = predict_salient_points(out.region, params, config);
  Tensor q_new = resample_queries(out.region, out.reduced, out.points, config, reduced_map);
  Tensor q_pos = make_position_embeddings(out.points, dim);
  if (config.reweight) {
    auto rw = reweight(q_new, q_pos, queries.q, params);
    out.q = rw.q;
    out.q_pos = rw.q_pos;
  } else {
    out.q = q_new;
    out.q_pos = q_pos;
  }
  return out;
}

}  // namespace samdetr
