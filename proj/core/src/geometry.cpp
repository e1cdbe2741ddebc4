#include "samdetr/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "samdetr/ops.hpp"

namespace samdetr {

Corners to_corners(const Box& b) {
  const double hw = b.w * 0.5, hh = b.h * 0.5;
  return Corners{b.cx - hw, b.cy - hh, b.cx + hw, b.cy + hh};
}

Box from_corners(const Corners& c) {
  return Box{(c.x1 + c.x2) * 0.5, (c.y1 + c.y2) * 0.5, c.x2 - c.x1, c.y2 - c.y1};
}

Corners clip_to_image(const Box& b) {
  Corners c = to_corners(b);
  c.x1 = std::clamp(c.x1, 0.0, 1.0);
  c.y1 = std::clamp(c.y1, 0.0, 1.0);
  c.x2 = std::clamp(c.x2, 0.0, 1.0);
  c.y2 = std::clamp(c.y2, 0.0, 1.0);
  return c;
}

bool is_valid(const Box& b) { return b.w > 0.0 && b.h > 0.0 && clip_to_image(b).area() > 0.0; }

namespace {

double intersection_area(const Corners& a, const Corners& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double inter = intersection_area(ca, cb);
  const double uni = ca.area() + cb.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double inter = intersection_area(ca, cb);
  const double uni = ca.area() + cb.area() - inter;
  const Corners hull{std::min(ca.x1, cb.x1), std::min(ca.y1, cb.y1), std::max(ca.x2, cb.x2), std::max(ca.y2, cb.y2)};
  const double hull_area = hull.area();
  if (uni <= 0.0 || hull_area <= 0.0) return 0.0;
  return inter / uni - (hull_area - uni) / hull_area;
}

namespace {

struct AxisMap {
  double scale_x, offset_x, scale_y, offset_y;
};

// Bilinear gather from maps [B x H x W x C] at points [B x K x 2] mapped to
// index space by `axis`. Positions clamp to [0, extent-1].
Tensor bilinear_gather(const Tensor& maps, const Tensor& points, const AxisMap& axis) {
  const std::size_t batch = maps.dim(0), h = maps.dim(1), w = maps.dim(2), c = maps.dim(3);
  if (points.rank() != 3 || points.dim(0) != batch || points.dim(2) != 2) {
    throw DimensionError("bilinear sampling: points " + shape_str(points.shape()) + " do not match maps " +
                         shape_str(maps.shape()));
  }
  const std::size_t k = points.dim(1);

  struct Tap {
    std::size_t i00, i01, i10, i11;  // flat offsets of the four neighbours (times C)
    double ax, ay;
    double dfx, dfy;  // d(index)/d(point); zero where clamped
  };
  std::vector<Tap> taps(batch * k);
  const auto pd = points.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t p = b * k + j;
      double fx = pd[p * 2] * axis.scale_x + axis.offset_x;
      double fy = pd[p * 2 + 1] * axis.scale_y + axis.offset_y;
      const double max_x = static_cast<double>(w - 1), max_y = static_cast<double>(h - 1);
      Tap t{};
      t.dfx = (fx > 0.0 && fx < max_x) ? axis.scale_x : 0.0;
      t.dfy = (fy > 0.0 && fy < max_y) ? axis.scale_y : 0.0;
      fx = std::clamp(fx, 0.0, max_x);
      fy = std::clamp(fy, 0.0, max_y);
      const std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(fx)), w - 1);
      const std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(fy)), h - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      t.ax = fx - static_cast<double>(x0);
      t.ay = fy - static_cast<double>(y0);
      const std::size_t base = b * h * w;
      t.i00 = (base + y0 * w + x0) * c;
      t.i01 = (base + y0 * w + x1) * c;
      t.i10 = (base + y1 * w + x0) * c;
      t.i11 = (base + y1 * w + x1) * c;
      taps[p] = t;
    }
  }
  Tensor out = Tensor::zeros({batch, k, c});
  auto od = out.mutable_data();
  const auto md = maps.data();
  for (std::size_t p = 0; p < taps.size(); ++p) {
    const Tap& t = taps[p];
    const double w00 = (1 - t.ax) * (1 - t.ay), w01 = t.ax * (1 - t.ay), w10 = (1 - t.ax) * t.ay, w11 = t.ax * t.ay;
    for (std::size_t ch = 0; ch < c; ++ch) {
      od[p * c + ch] = w00 * md[t.i00 + ch] + w01 * md[t.i01 + ch] + w10 * md[t.i10 + ch] + w11 * md[t.i11 + ch];
    }
  }
  TensorImpl* mi = maps.impl().get();
  TensorImpl* pi = points.impl().get();
  detail::record({&maps, &points}, out, [mi, pi, c, taps = std::move(taps)](TensorImpl& oi) {
    if (mi->requires_grad) mi->ensure_grad();
    if (pi->requires_grad) pi->ensure_grad();
    for (std::size_t p = 0; p < taps.size(); ++p) {
      const Tap& t = taps[p];
      const double* g = oi.grad.data() + p * c;
      if (mi->requires_grad) {
        const double w00 = (1 - t.ax) * (1 - t.ay), w01 = t.ax * (1 - t.ay), w10 = (1 - t.ax) * t.ay,
                     w11 = t.ax * t.ay;
        for (std::size_t ch = 0; ch < c; ++ch) {
          mi->grad[t.i00 + ch] += w00 * g[ch];
          mi->grad[t.i01 + ch] += w01 * g[ch];
          mi->grad[t.i10 + ch] += w10 * g[ch];
          mi->grad[t.i11 + ch] += w11 * g[ch];
        }
      }
      if (pi->requires_grad && (t.dfx != 0.0 || t.dfy != 0.0)) {
        const double* m = mi->data.data();
        double gx = 0.0, gy = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double f00 = m[t.i00 + ch], f01 = m[t.i01 + ch], f10 = m[t.i10 + ch], f11 = m[t.i11 + ch];
          gx += g[ch] * ((1 - t.ay) * (f01 - f00) + t.ay * (f11 - f10));
          gy += g[ch] * ((1 - t.ax) * (f10 - f00) + t.ax * (f11 - f01));
        }
        pi->grad[p * 2] += gx * t.dfx;
        pi->grad[p * 2 + 1] += gy * t.dfy;
      }
    }
  });
  return out;
}

void require_map(const Tensor& features, const char* op) {
  if (features.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [H x W x C] features, got " + shape_str(features.shape()));
  }
}

}  // namespace

RegionFeatures roi_align(const Tensor& features, const std::vector<Box>& boxes) {
  require_map(features, "roi_align");
  if (boxes.empty()) throw DimensionError("roi_align: no boxes");
  const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
  const std::size_t n = boxes.size();
  constexpr std::size_t bins = kRoiSize * kRoiSize;
  std::vector<double> centres(n * bins * 2);
  for (std::size_t q = 0; q < n; ++q) {
    const Corners cb = clip_to_image(boxes[q]);
    if (!(cb.width() > 0.0) || !(cb.height() > 0.0)) {
      throw ContractError("roi_align: reference box of query " + std::to_string(q) +
                          " is degenerate after clipping to the image");
    }
    const double bw = cb.width() / static_cast<double>(kRoiSize);
    const double bh = cb.height() / static_cast<double>(kRoiSize);
    for (std::size_t r = 0; r < kRoiSize; ++r) {
      for (std::size_t col = 0; col < kRoiSize; ++col) {
        const std::size_t idx = (q * bins + r * kRoiSize + col) * 2;
        centres[idx] = cb.x1 + (static_cast<double>(col) + 0.5) * bw;
        centres[idx + 1] = cb.y1 + (static_cast<double>(r) + 0.5) * bh;
      }
    }
  }
  Tensor pts = Tensor::from({1, n * bins, 2}, std::move(centres));
  const AxisMap axis{static_cast<double>(w), -0.5, static_cast<double>(h), -0.5};
  Tensor sampled = bilinear_gather(reshape(features, {1, h, w, c}), pts, axis);
  return RegionFeatures{reshape(sampled, {n, kRoiSize, kRoiSize, c}), boxes};
}

Tensor bilinear_point_sample(const RegionFeatures& region, const Tensor& points) {
  if (region.grid.rank() != 4 || region.grid.dim(1) != kRoiSize || region.grid.dim(2) != kRoiSize) {
    throw DimensionError("bilinear_point_sample: region grid must be [N x 7 x 7 x C], got " +
                         shape_str(region.grid.shape()));
  }
  if (points.rank() != 3 || points.dim(0) != region.count() || points.dim(2) != 2) {
    throw DimensionError("bilinear_point_sample: points " + shape_str(points.shape()) + " do not match region " +
                         shape_str(region.grid.shape()));
  }
  for (double v : points.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("bilinear_point_sample: box-relative point coordinate " + std::to_string(v) +
                          " outside [0,1]");
    }
  }
  const double extent = static_cast<double>(kRoiSize - 1);
  return bilinear_gather(region.grid, points, AxisMap{extent, 0.0, extent, 0.0});
}

Tensor sample_feature_map(const Tensor& features, const Tensor& points) {
  require_map(features, "sample_feature_map");
  if (points.rank() != 3 || points.dim(2) != 2) {
    throw DimensionError("sample_feature_map: expected [N x M x 2] points, got " + shape_str(points.shape()));
  }
  const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
  const std::size_t n = points.dim(0), m = points.dim(1);
  const AxisMap axis{static_cast<double>(w), -0.5, static_cast<double>(h), -0.5};
  Tensor sampled = bilinear_gather(reshape(features, {1, h, w, c}), reshape(points, {1, n * m, 2}), axis);
  return reshape(sampled, {n, m, c});
}

}  // namespace samdetr
