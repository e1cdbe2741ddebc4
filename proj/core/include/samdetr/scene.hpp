#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "samdetr/matching.hpp"
#include "samdetr/tensor.hpp"

namespace samdetr {

/// Shape families used as classes.
enum class ShapeKind : int { kRectangle = 0, kDisk = 1, kTriangle = 2 };

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t classes = 3;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  double min_extent = 10.0;  // pixels
  double max_extent = 28.0;
  double background = 0.5;
  double noise_sigma = 0.02;
  double max_pair_iou = 0.3;
  /// Minimum distance of every colour channel set from the background grey.
  double min_contrast = 0.2;
  std::size_t max_attempts = 1000;
};

struct SceneSample {
  Tensor image;  // [3 x S x S] in [0, 1]
  std::vector<GroundTruth> gts;
  std::uint64_t seed = 0;
};

class SceneGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic synthetic scene: filled rectangles, disks and triangles with
/// tight raster bounding boxes over a noisy grey background.
SceneSample generate_scene(std::uint64_t seed, const SceneConfig& config = {});

/// Seed of the i-th scene of a split; distinct splits use distinct salts.
std::uint64_t scene_seed(std::uint64_t run_seed, std::uint64_t salt, std::uint64_t index);

/// Rasterised disk used by the generator: pixels whose centre lies within
/// `radius` of (cx, cy), returned as tight bounds in normalised coordinates.
Box disk_raster_box(double cx, double cy, double radius, std::size_t image_size);

}  // namespace samdetr
