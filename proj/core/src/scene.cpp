#include "samdetr/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>

#include "samdetr/rng.hpp"

namespace samdetr {

namespace {

using Mask = std::vector<char>;
using Inside = std::function<bool(double, double)>;

// Pixels whose centre satisfies `inside`, with tight bounds in pixel units.
struct Raster {
  Mask mask;
  std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // x2/y2 exclusive
  bool empty = true;
};

Raster rasterize(const Inside& inside, std::size_t size) {
  Raster r;
  r.mask.assign(size * size, 0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      if (!inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) continue;
      r.mask[y * size + x] = 1;
      if (r.empty) {
        r.x1 = x;
        r.x2 = x + 1;
        r.y1 = y;
        r.y2 = y + 1;
        r.empty = false;
      } else {
        r.x1 = std::min(r.x1, x);
        r.x2 = std::max(r.x2, x + 1);
        r.y1 = std::min(r.y1, y);
        r.y2 = std::max(r.y2, y + 1);
      }
    }
  }
  return r;
}

Box raster_box(const Raster& r, std::size_t size) {
  const double s = static_cast<double>(size);
  return from_corners(Corners{static_cast<double>(r.x1) / s, static_cast<double>(r.y1) / s,
                              static_cast<double>(r.x2) / s, static_cast<double>(r.y2) / s});
}

Inside disk(double cx, double cy, double radius) {
  return [=](double x, double y) { return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius; };
}

Inside triangle(std::array<double, 6> v) {
  return [v](double x, double y) {
    auto edge = [&](int a, int b) {
      return (v[2 * b] - v[2 * a]) * (y - v[2 * a + 1]) - (v[2 * b + 1] - v[2 * a + 1]) * (x - v[2 * a]);
    };
    const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  };
}

}  // namespace

Box disk_raster_box(double cx, double cy, double radius, std::size_t image_size) {
  return raster_box(rasterize(disk(cx, cy, radius), image_size), image_size);
}

std::uint64_t scene_seed(std::uint64_t run_seed, std::uint64_t salt, std::uint64_t index) {
  // splitmix64 finaliser over the combined key
  std::uint64_t z = run_seed * 0x9E3779B97F4A7C15ULL + salt * 0xBF58476D1CE4E5B9ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& config) {
  const std::size_t s = config.image_size;
  const double side = static_cast<double>(s);
  Rng rng(seed);
  const std::size_t span = config.max_objects - config.min_objects + 1;
  const std::size_t count = config.min_objects + static_cast<std::size_t>(rng.below(span));

  struct Placed {
    Raster raster;
    std::array<double, 3> colour;
  };
  std::vector<Placed> placed;
  SceneSample scene;
  scene.seed = seed;
  std::size_t attempts = 0;
  while (placed.size() < count) {
    if (++attempts > config.max_attempts) {
      throw SceneGenerationError("scene " + std::to_string(seed) + ": could not place " + std::to_string(count) +
                                 " objects within " + std::to_string(config.max_attempts) + " attempts");
    }
    const int cls = static_cast<int>(rng.below(config.classes));
    const double ew = rng.uniform(config.min_extent, config.max_extent);
    const double eh = rng.uniform(config.min_extent, config.max_extent);
    Inside inside;
    switch (static_cast<ShapeKind>(cls % 3)) {
      case ShapeKind::kRectangle: {
        const double x0 = rng.uniform(0.0, side - ew), y0 = rng.uniform(0.0, side - eh);
        inside = [=](double x, double y) { return x >= x0 && x <= x0 + ew && y >= y0 && y <= y0 + eh; };
        break;
      }
      case ShapeKind::kDisk: {
        const double r = 0.5 * ew;
        const double cx = rng.uniform(r, side - r), cy = rng.uniform(r, side - r);
        inside = disk(cx, cy, r);
        break;
      }
      case ShapeKind::kTriangle: {
        const double x0 = rng.uniform(0.0, side - ew), y0 = rng.uniform(0.0, side - eh);
        const double apex = rng.uniform(0.2, 0.8);
        inside = triangle({x0, y0 + eh, x0 + ew, y0 + eh, x0 + apex * ew, y0});
        break;
      }
    }
    Raster raster = rasterize(inside, s);
    if (raster.empty) continue;
    const Box box = raster_box(raster, s);
    const bool overlaps = std::any_of(scene.gts.begin(), scene.gts.end(),
                                      [&](const GroundTruth& g) { return iou(g.box, box) > config.max_pair_iou; });
    if (overlaps) continue;
    std::array<double, 3> colour{};
    do {
      for (double& c : colour) c = rng.uniform();
    } while (std::all_of(colour.begin(), colour.end(), [&](double c) {
      return std::abs(c - config.background) < config.min_contrast;
    }));
    scene.gts.push_back(GroundTruth{box, cls});
    placed.push_back(Placed{std::move(raster), colour});
  }

  Tensor image = Tensor::full({3, s, s}, config.background);
  auto px = image.mutable_data();
  for (const auto& p : placed) {
    for (std::size_t i = 0; i < s * s; ++i) {
      if (!p.raster.mask[i]) continue;
      for (std::size_t c = 0; c < 3; ++c) px[c * s * s + i] = p.colour[c];
    }
  }
  for (double& v : px) v = std::clamp(v + config.noise_sigma * rng.normal(), 0.0, 1.0);
  scene.image = image;
  return scene;
}

}  // namespace samdetr
