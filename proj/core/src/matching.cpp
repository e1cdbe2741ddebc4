#include "samdetr/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "samdetr/ops.hpp"

namespace samdetr {

double MatchResult::total_cost(const CostMatrix& cost) const {
  double total = 0.0;
  for (const auto& [r, c] : pairs) total += cost(r, c);
  return total;
}

MatchResult hungarian(const CostMatrix& cost) {
  for (double v : cost.values) {
    if (std::isnan(v)) throw ContractError("hungarian: cost matrix contains NaN");
  }
  MatchResult result;
  if (cost.rows == 0 || cost.cols == 0) {
    for (std::size_t r = 0; r < cost.rows; ++r) result.unmatched_rows.push_back(r);
    return result;
  }
  // The solver below needs rows <= cols; solve the transpose otherwise.
  const bool transposed = cost.rows > cost.cols;
  const std::size_t n = transposed ? cost.cols : cost.rows;
  const std::size_t m = transposed ? cost.rows : cost.cols;
  auto a = [&](std::size_t i, std::size_t j) { return transposed ? cost(j, i) : cost(i, j); };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t i = p[j] - 1, col = j - 1;
    result.pairs.emplace_back(transposed ? col : i, transposed ? i : col);
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  std::vector<char> matched(cost.rows, 0);
  for (const auto& pr : result.pairs) matched[pr.first] = 1;
  for (std::size_t r = 0; r < cost.rows; ++r) {
    if (!matched[r]) result.unmatched_rows.push_back(r);
  }
  return result;
}

namespace {

double sigmoid_value(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double l1_distance(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

}  // namespace

CostMatrix matching_cost(const LayerPrediction& pred, const std::vector<GroundTruth>& gts, const LossWeights& weights) {
  const std::size_t n = pred.logits.dim(0), c = pred.logits.dim(1);
  CostMatrix cost(n, gts.size());
  const auto boxes = pred.box_values();
  const auto logits = pred.logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < gts.size(); ++k) {
      const auto cls = static_cast<std::size_t>(gts[k].cls);
      if (cls >= c) throw ContractError("matching_cost: ground-truth class " + std::to_string(cls) + " out of range");
      const double prob = sigmoid_value(logits[i * c + cls]);
      cost(i, k) = -weights.cls * prob + weights.l1 * l1_distance(boxes[i], gts[k].box) +
                   weights.giou * (1.0 - giou(boxes[i], gts[k].box));
    }
  }
  return cost;
}

Tensor giou_rows(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != target.shape()) {
    throw DimensionError("giou_rows: expected matching [K x 4] boxes, got " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()));
  }
  auto col = [](const Tensor& t, std::size_t i) { return slice(t, 1, i, i + 1); };
  auto corners = [&](const Tensor& t) {
    Tensor cx = col(t, 0), cy = col(t, 1), hw = scale(col(t, 2), 0.5), hh = scale(col(t, 3), 0.5);
    return std::array<Tensor, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  const auto p = corners(pred);
  const auto t = corners(target);
  Tensor area_p = mul(sub(p[2], p[0]), sub(p[3], p[1]));
  Tensor area_t = mul(sub(t[2], t[0]), sub(t[3], t[1]));
  Tensor iw = relu(sub(minimum(p[2], t[2]), maximum(p[0], t[0])));
  Tensor ih = relu(sub(minimum(p[3], t[3]), maximum(p[1], t[1])));
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(area_p, area_t), inter);
  Tensor hw = sub(maximum(p[2], t[2]), minimum(p[0], t[0]));
  Tensor hh = sub(maximum(p[3], t[3]), minimum(p[1], t[1]));
  Tensor hull = mul(hw, hh);
  return sub(div(inter, uni), div(sub(hull, uni), hull));
}

LayerLoss layer_loss(const LayerPrediction& pred, const std::vector<GroundTruth>& gts, const LossWeights& weights,
                     const FocalParams& focal, const MatchResult* fixed_match) {
  LayerLoss out;
  out.match = fixed_match ? *fixed_match : hungarian(matching_cost(pred, gts, weights));
  const std::size_t n = pred.logits.dim(0);
  std::vector<int> targets(n, kNoObject);
  for (const auto& [q, g] : out.match.pairs) targets[q] = gts[g].cls;
  Tensor cls_loss = focal_loss(pred.logits, targets, focal);
  out.focal = cls_loss.item();
  out.total = scale(cls_loss, weights.cls);
  if (out.match.pairs.empty()) return out;

  const std::size_t k = out.match.pairs.size();
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(gts.size(), 1));
  std::vector<std::size_t> rows;
  std::vector<double> target_values;
  for (const auto& [q, g] : out.match.pairs) {
    rows.push_back(q);
    const Box& b = gts[g].box;
    target_values.insert(target_values.end(), {b.cx, b.cy, b.w, b.h});
  }
  Tensor matched = index_select(pred.boxes, rows);
  Tensor target = Tensor::from({k, 4}, std::move(target_values));
  Tensor l1 = scale(sum(abs(sub(matched, target))), norm);
  Tensor giou_loss = scale(add_scalar(scale(sum(giou_rows(matched, target)), -1.0), static_cast<double>(k)), norm);
  out.l1 = l1.item();
  out.giou = giou_loss.item();
  out.total = add(out.total, add(scale(l1, weights.l1), scale(giou_loss, weights.giou)));
  return out;
}

DetectionLoss detection_loss(const DetectionOutput& outputs, const std::vector<GroundTruth>& gts,
                             const LossWeights& weights, const FocalParams& focal,
                             const std::vector<MatchResult>* fixed_matches) {
  if (fixed_matches && fixed_matches->size() != outputs.layers.size()) {
    throw ContractError("detection_loss: need one fixed match per decoder layer");
  }
  DetectionLoss out;
  for (std::size_t l = 0; l < outputs.layers.size(); ++l) {
    const MatchResult* fixed = fixed_matches ? &(*fixed_matches)[l] : nullptr;
    out.layers.push_back(layer_loss(outputs.layers[l], gts, weights, focal, fixed));
    out.total = out.total.defined() ? add(out.total, out.layers.back().total) : out.layers.back().total;
  }
  return out;
}

}  // namespace samdetr
