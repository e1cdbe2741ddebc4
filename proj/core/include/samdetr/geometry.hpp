#pragma once

#include <cstddef>
#include <vector>

#include "samdetr/tensor.hpp"

namespace samdetr {

/// Axis-aligned box in normalised image coordinates (centre, size).
struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  bool operator==(const Box&) const = default;
};

struct Corners {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
};

Corners to_corners(const Box& b);
Box from_corners(const Corners& c);

/// Box corners clamped to the unit square.
Corners clip_to_image(const Box& b);

/// Positive size and a non-empty intersection with the image.
bool is_valid(const Box& b);

double iou(const Box& a, const Box& b);
/// IoU minus the empty fraction of the enclosing hull; in (-1, 1].
double giou(const Box& a, const Box& b);

inline constexpr std::size_t kRoiSize = 7;

/// Per-query RoI grids [N x 7 x 7 x C] and the boxes they were pooled from.
struct RegionFeatures {
  Tensor grid;
  std::vector<Box> boxes;

  std::size_t count() const { return grid.dim(0); }
  std::size_t channels() const { return grid.dim(3); }
};

/// Bilinear RoI pooling with one sample at every bin centre. `features` is
/// [H x W x C]; pixel (row, col) sits at continuous position (col+0.5,
/// row+0.5). Boxes are clipped to the image; samples past the border clamp to
/// the edge pixels.
RegionFeatures roi_align(const Tensor& features, const std::vector<Box>& boxes);

/// Samples each query's RoI grid at box-relative points [N x M x 2] in
/// [0,1]^2, where (0,0) is the centre of cell (0,0) and (1,1) the centre of
/// cell (6,6). Returns [N x M x C]; differentiable in the grid and points.
Tensor bilinear_point_sample(const RegionFeatures& region, const Tensor& points);

/// Samples an [H x W x C] map at normalised image coordinates [N x M x 2]
/// using the same pixel-centre convention as roi_align. Returns [N x M x C].
Tensor sample_feature_map(const Tensor& features, const Tensor& points);

}  // namespace samdetr
