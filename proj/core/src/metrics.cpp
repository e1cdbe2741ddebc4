#include "samdetr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace samdetr {

std::vector<Detection> detections_from(const LayerPrediction& pred) {
  const std::size_t n = pred.logits.dim(0), c = pred.logits.dim(1);
  const auto logits = pred.logits.data();
  const auto boxes = pred.box_values();
  std::vector<Detection> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    }
    out.push_back(Detection{boxes[i], static_cast<int>(best), 1.0 / (1.0 + std::exp(-logits[i * c + best]))});
  }
  return out;
}

double interpolated_ap(const std::vector<double>& recall, const std::vector<double>& precision) {
  // precision envelope from the right, then sum over recall steps
  std::vector<double> env(precision);
  for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * env[i];
    prev_recall = recall[i];
  }
  return ap;
}

double evaluate_ap50(const std::vector<std::vector<Detection>>& predictions,
                     const std::vector<std::vector<GroundTruth>>& gts) {
  std::set<int> classes;
  for (const auto& image : gts) {
    for (const auto& g : image) classes.insert(g.cls);
  }
  if (classes.empty()) return 0.0;

  double total = 0.0;
  for (int cls : classes) {
    // (score, image, detection index); ties broken by image then index
    std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;
    std::size_t positives = 0;
    for (std::size_t img = 0; img < gts.size(); ++img) {
      for (const auto& g : gts[img]) positives += g.cls == cls;
      if (img >= predictions.size()) continue;
      for (std::size_t d = 0; d < predictions[img].size(); ++d) {
        if (predictions[img][d].cls == cls) ranked.emplace_back(predictions[img][d].score, img, d);
      }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      return std::tie(std::get<1>(a), std::get<2>(a)) < std::tie(std::get<1>(b), std::get<2>(b));
    });

    std::vector<std::vector<char>> used(gts.size());
    for (std::size_t img = 0; img < gts.size(); ++img) used[img].assign(gts[img].size(), 0);
    std::vector<double> recall, precision;
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto [score, img, d] = ranked[r];
      const Box& box = predictions[img][d].box;
      double best_iou = -1.0;
      std::ptrdiff_t best = -1;
      for (std::size_t g = 0; g < gts[img].size(); ++g) {
        if (gts[img][g].cls != cls || used[img][g]) continue;
        const double v = iou(box, gts[img][g].box);
        if (v >= 0.5 && v > best_iou) {
          best_iou = v;
          best = static_cast<std::ptrdiff_t>(g);
        }
      }
      if (best >= 0) {
        used[img][static_cast<std::size_t>(best)] = 1;
        ++tp;
      }
      recall.push_back(static_cast<double>(tp) / static_cast<double>(positives));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    }
    total += interpolated_ap(recall, precision);
  }
  return total / static_cast<double>(classes.size());
}

}  // namespace samdetr
