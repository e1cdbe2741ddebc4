#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "samdetr/features.hpp"
#include "samdetr/geometry.hpp"
#include "samdetr/nn.hpp"

namespace samdetr {

/// How new query embeddings are resampled from the RoI grid.
enum class ResampleStrategy {
  kAvg,  // mean over the 7x7 grid
  kMax,  // per-channel max over the grid
  kSp1,  // one salient point, replicated into every head slice
  kSpm,  // one salient point per attention head
};

enum class SearchRange {
  kWithinBox,    // points constrained to the reference box
  kWithinImage,  // points anywhere in the image
};

const char* to_string(ResampleStrategy s);
const char* to_string(SearchRange r);
ResampleStrategy parse_strategy(const std::string& name);
SearchRange parse_search_range(const std::string& name);

struct AlignerConfig {
  ResampleStrategy strategy = ResampleStrategy::kSpm;
  std::size_t heads = 8;
  bool reweight = true;
  SearchRange search_range = SearchRange::kWithinBox;

  bool uses_points() const { return strategy == ResampleStrategy::kSp1 || strategy == ResampleStrategy::kSpm; }
  /// Distinct points predicted per query.
  std::size_t predicted_points() const { return strategy == ResampleStrategy::kSpm ? heads : 1; }
};

struct AlignerParams {
  ConvLayer point_conv1;   // 3x3, d -> hidden
  ConvLayer point_conv2;   // 3x3, hidden -> hidden
  ConvLayer point_reduce;  // 1x1, hidden -> d/M
  Mlp point_mlp;           // 49*(d/M) -> d -> 2*points
  Linear value_reduce;     // 1x1 channel reduction d -> d/M on the sampled path
  Tensor w_rw1;            // [d x d]
  Tensor w_rw2;            // [d x d]
};

/// Registers aligner parameters under `name`. `conv_channels` is the width of
/// the two 3x3 point-head convolutions.
AlignerParams make_aligner(ParameterSet& params, const std::string& name, std::size_t dim,
                           std::size_t conv_channels, const AlignerConfig& config, Rng& rng);

/// Salient points of every query, always [N x M x 2]: SP1 replicates its single
/// point over the M heads; AVG/MAX use the box centre.
struct SalientPoints {
  Tensor box_relative;  // (u, v) relative to the clipped reference box
  Tensor image;         // normalised image coordinates
  SearchRange range = SearchRange::kWithinBox;

  std::size_t count() const { return box_relative.dim(0); }
  std::size_t per_query() const { return box_relative.dim(1); }
};

SalientPoints predict_salient_points(const RegionFeatures& region, const AlignerParams& params,
                                     const AlignerConfig& config);

/// New query embeddings [N x d] taken from the feature space without any
/// learned projection. AVG/MAX read the full-width `region`; SP1/SPM read
/// `reduced` (d/M channels) or, for the within-image range, `reduced_map`.
Tensor resample_queries(const RegionFeatures& region, const RegionFeatures& reduced, const SalientPoints& points,
                        const AlignerConfig& config, const std::optional<Tensor>& reduced_map = std::nullopt);

/// Sinusoidal embeddings of each point's image coordinate at d/M dims,
/// concatenated in head order to [N x d].
Tensor make_position_embeddings(const SalientPoints& points, std::size_t dim);

struct Reweighted {
  Tensor q;
  Tensor q_pos;
};

/// q_new * sigmoid(q_prev W_rw1) and q_pos * sigmoid(q_prev W_rw2).
Reweighted reweight(const Tensor& q_new, const Tensor& q_pos, const Tensor& q_prev, const AlignerParams& params);

struct AlignerOutput {
  Tensor q;      // [N x d]
  Tensor q_pos;  // [N x d]
  SalientPoints points;
  RegionFeatures region;   // full width
  RegionFeatures reduced;  // d/M channels
};

AlignerOutput aligner_forward(const EncodedFeatures& encoded, const QuerySet& queries, const AlignerParams& params,
                              const AlignerConfig& config);

}  // namespace samdetr
