#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "samdetr/geometry.hpp"
#include "samdetr/model.hpp"
#include "samdetr/nn.hpp"

namespace samdetr {

struct GroundTruth {
  Box box;
  int cls = 0;
};

/// Dense row-major cost matrix.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  std::vector<std::size_t> unmatched_rows;

  double total_cost(const CostMatrix& cost) const;
};

/// Minimum-cost assignment of min(rows, cols) pairs (shortest augmenting
/// paths with potentials, O(n^2 m)). Throws ContractError on NaN.
MatchResult hungarian(const CostMatrix& cost);

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

/// Prediction x ground-truth cost: -cls*p(gt class) + l1*L1(box) + giou*(1-GIoU).
CostMatrix matching_cost(const LayerPrediction& pred, const std::vector<GroundTruth>& gts,
                         const LossWeights& weights = {});

/// Per-row GIoU of two cxcywh box tensors [K x 4], differentiable in `pred`.
Tensor giou_rows(const Tensor& pred, const Tensor& target);

struct LayerLoss {
  Tensor total;
  double focal = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  MatchResult match;
};

/// Set loss of one decoder layer: focal over all queries (unmatched queries
/// target no-object) plus L1 and GIoU over matched pairs, both normalised by
/// the number of ground-truth boxes. The matching is a constant of the graph;
/// pass `fixed_match` to reuse a previous assignment.
LayerLoss layer_loss(const LayerPrediction& pred, const std::vector<GroundTruth>& gts,
                     const LossWeights& weights = {}, const FocalParams& focal = {},
                     const MatchResult* fixed_match = nullptr);

struct DetectionLoss {
  Tensor total;  // sum over decoder layers
  std::vector<LayerLoss> layers;
};

/// Sum of layer_loss over decoder layers, each matched independently unless
/// `fixed_matches` (one per layer) is given.
DetectionLoss detection_loss(const DetectionOutput& outputs, const std::vector<GroundTruth>& gts,
                             const LossWeights& weights = {}, const FocalParams& focal = {},
                             const std::vector<MatchResult>* fixed_matches = nullptr);

}  // namespace samdetr
