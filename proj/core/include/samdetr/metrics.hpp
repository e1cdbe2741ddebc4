#pragma once

#include <cstddef>
#include <vector>

#include "samdetr/geometry.hpp"
#include "samdetr/matching.hpp"

namespace samdetr {

/// One scored detection.
struct Detection {
  Box box;
  int cls = 0;
  double score = 0.0;
};

/// Detections of one image: one per query, labelled by its most probable class.
std::vector<Detection> detections_from(const LayerPrediction& pred);

/// AP at IoU >= 0.5 over a set of images. Detections of each class are ranked
/// by score over all images and greedily matched to the best unmatched
/// same-class ground truth; AP is the area under the interpolated PR curve,
/// averaged over classes that have ground truth. Empty ground truth gives 0.
double evaluate_ap50(const std::vector<std::vector<Detection>>& predictions,
                     const std::vector<std::vector<GroundTruth>>& gts);

/// All-point interpolated area under a PR curve given cumulative points in
/// ranking order.
double interpolated_ap(const std::vector<double>& recall, const std::vector<double>& precision);

}  // namespace samdetr
