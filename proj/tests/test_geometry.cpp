#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "samdetr/geometry.hpp"
#include "samdetr/gradcheck.hpp"
#include "samdetr/ops.hpp"
#include "test_util.hpp"

using namespace samdetr;
using samdetr::testing::random_tensor;

namespace {

// Pixel-unit rectangle area, independent of the Box helpers.
double rect_area(double x1, double y1, double x2, double y2) { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }

// f(x, y) = x at pixel centres, in pixel units.
Tensor ramp_x(std::size_t h, std::size_t w, std::size_t c) {
  Tensor t = Tensor::zeros({h, w, c});
  auto d = t.mutable_data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t k = 0; k < c; ++k) d[(r * w + col) * c + k] = static_cast<double>(col) + 0.5;
  return t;
}

Tensor ramp_y(std::size_t h, std::size_t w) {
  Tensor t = Tensor::zeros({h, w, 1});
  auto d = t.mutable_data();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) d[r * w + col] = static_cast<double>(r) + 0.5;
  return t;
}

}  // namespace

TEST(Box, ConvertExamples) {
  Corners c = to_corners(Box{0.5, 0.5, 1.0, 1.0});
  EXPECT_EQ(c.x1, 0.0);
  EXPECT_EQ(c.y1, 0.0);
  EXPECT_EQ(c.x2, 1.0);
  EXPECT_EQ(c.y2, 1.0);
  c = to_corners(Box{0.25, 0.25, 0.5, 0.5});
  EXPECT_EQ(c.x1, 0.0);
  EXPECT_EQ(c.x2, 0.5);
}

TEST(Box, RoundTripIsExact) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    // dyadic values keep both directions exact
    const Box b{std::ldexp(std::floor(rng.uniform(0, 1024)), -10), std::ldexp(std::floor(rng.uniform(0, 1024)), -10),
                std::ldexp(std::floor(rng.uniform(1, 512)), -10), std::ldexp(std::floor(rng.uniform(1, 512)), -10)};
    EXPECT_EQ(from_corners(to_corners(b)), b);
  }
}

TEST(Box, ValidityAndClip) {
  EXPECT_TRUE(is_valid(Box{0.5, 0.5, 0.2, 0.2}));
  EXPECT_FALSE(is_valid(Box{0.5, 0.5, 0.0, 0.2}));
  EXPECT_FALSE(is_valid(Box{2.0, 2.0, 0.2, 0.2}));
  Corners c = clip_to_image(Box{0.0, 0.5, 0.4, 0.4});
  EXPECT_EQ(c.x1, 0.0);
  EXPECT_DOUBLE_EQ(c.x2, 0.2);
}

TEST(Giou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(giou(Box{0.3, 0.6, 0.2, 0.4}, Box{0.3, 0.6, 0.2, 0.4}), 1.0); }

TEST(Giou, DisjointBoxesAgainstAreaOracle) {
  const Box a{0.1, 0.1, 0.2, 0.2}, b{0.9, 0.9, 0.2, 0.2};
  const double uni = rect_area(0.0, 0.0, 0.2, 0.2) + rect_area(0.8, 0.8, 1.0, 1.0);
  const double hull = rect_area(0.0, 0.0, 1.0, 1.0);
  EXPECT_EQ(iou(a, b), 0.0);
  EXPECT_NEAR(giou(a, b), -(hull - uni) / hull, 1e-12);
}

TEST(Giou, LeftHalf) {
  const Box unit{0.5, 0.5, 1.0, 1.0}, left{0.25, 0.5, 0.5, 1.0};
  EXPECT_NEAR(iou(unit, left), 0.5, 1e-15);
  EXPECT_NEAR(giou(unit, left), 0.5, 1e-15);
}

TEST(Giou, BoundedAndBelowIou) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Box a{rng.uniform(), rng.uniform(), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
    const Box b{rng.uniform(), rng.uniform(), rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
    const double g = giou(a, b);
    EXPECT_GT(g, -1.0);
    EXPECT_LE(g, iou(a, b) + 1e-15);
    EXPECT_NEAR(g, giou(b, a), 1e-15);
  }
}

TEST(RoiAlign, ConstantFeatures) {
  RegionFeatures r = roi_align(Tensor::full({6, 6, 3}, 0.37), {Box{0.3, 0.4, 0.5, 0.2}, Box{0.5, 0.5, 1, 1}});
  ASSERT_EQ(r.grid.shape(), (Shape{2, 7, 7, 3}));
  for (double v : r.grid.data()) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(RoiAlign, RampMatchesClosedForm) {
  const std::size_t h = 8, w = 10;
  Rng rng(3);
  Tensor fx = ramp_x(h, w, 2), fy = ramp_y(h, w);
  for (int trial = 0; trial < 50; ++trial) {
    // keep bin centres within the pixel-centre hull so no clamping occurs
    const double bw = rng.uniform(0.1, 0.8), bh = rng.uniform(0.1, 0.7);
    const double x1 = rng.uniform(0.05, 0.95 - bw), y1 = rng.uniform(0.07, 0.93 - bh);
    const Box b = from_corners(Corners{x1, y1, x1 + bw, y1 + bh});
    RegionFeatures rx = roi_align(fx, {b});
    RegionFeatures ry = roi_align(fy, {b});
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        const double x = (x1 + (j + 0.5) * bw / 7) * w;
        const double y = (y1 + (i + 0.5) * bh / 7) * h;
        EXPECT_NEAR(rx.grid.at({0, i, j, 1}), x, 1e-9);
        EXPECT_NEAR(ry.grid.at({0, i, j, 0}), y, 1e-9);
      }
    }
  }
}

TEST(RoiAlign, ClampsAtBorder) {
  RegionFeatures r = roi_align(ramp_x(4, 4, 1), {Box{0.5, 0.5, 1.0, 1.0}});
  // first bin centre sits at x = 4/14 < 0.5, clamped to the edge pixel
  EXPECT_NEAR(r.grid.at({0, 3, 0, 0}), 0.5, 1e-12);
  EXPECT_NEAR(r.grid.at({0, 3, 6, 0}), 3.5, 1e-12);
}

TEST(RoiAlign, DegenerateBoxNamesQuery) {
  try {
    roi_align(Tensor::zeros({4, 4, 1}), {Box{0.5, 0.5, 0.2, 0.2}, Box{1.5, 0.5, 0.2, 0.2}});
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("query 1"), std::string::npos) << e.what();
  }
}

TEST(RoiAlign, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor f = random_tensor({5, 6, 2}, rng, -1, 1, true);
  const std::vector<Box> boxes{Box{0.4, 0.5, 0.53, 0.61}, Box{0.62, 0.33, 0.29, 0.4}};
  GradCheckResult r = check_gradient("roi_align", [&] { return roi_align(f, boxes).grid; }, {f});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

namespace {

RegionFeatures ramp_grid(std::size_t channels) {
  Tensor g = Tensor::zeros({1, 7, 7, channels});
  auto d = g.mutable_data();
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      for (std::size_t c = 0; c < channels; ++c) d[(i * 7 + j) * channels + c] = c == 0 ? j / 6.0 : i / 6.0;
  return RegionFeatures{g, {Box{}}};
}

}  // namespace

TEST(PointSample, CornerIsFirstCell) {
  Rng rng(5);
  RegionFeatures r{random_tensor({1, 7, 7, 3}, rng), {Box{}}};
  Tensor s = bilinear_point_sample(r, Tensor::from({1, 1, 2}, {0.0, 0.0}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at({0, 0, c}), r.grid.at({0, 0, 0, c}));
  s = bilinear_point_sample(r, Tensor::from({1, 1, 2}, {1.0, 1.0}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at({0, 0, c}), r.grid.at({0, 6, 6, c}));
}

TEST(PointSample, ConstantGrid) {
  RegionFeatures r{Tensor::full({1, 7, 7, 2}, -1.25), {Box{}}};
  Rng rng(6);
  Tensor s = bilinear_point_sample(r, random_tensor({1, 20, 2}, rng, 0, 1));
  for (double v : s.data()) EXPECT_NEAR(v, -1.25, 1e-15);
}

TEST(PointSample, RampOracle) {
  RegionFeatures r = ramp_grid(2);
  Tensor s = bilinear_point_sample(r, Tensor::from({1, 1, 2}, {0.5, 0.5}));
  EXPECT_NEAR(s.at({0, 0, 0}), 0.5, 1e-12);
  Rng rng(7);
  Tensor pts = random_tensor({1, 50, 2}, rng, 0, 1);
  s = bilinear_point_sample(r, pts);
  for (std::size_t m = 0; m < 50; ++m) {
    EXPECT_NEAR(s.at({0, m, 0}), pts.at({0, m, 0}), 1e-9);
    EXPECT_NEAR(s.at({0, m, 1}), pts.at({0, m, 1}), 1e-9);
  }
}

TEST(PointSample, OutOfRangeRejected) {
  RegionFeatures r = ramp_grid(1);
  EXPECT_THROW(bilinear_point_sample(r, Tensor::from({1, 1, 2}, {1.2, 0.5})), ContractError);
}

TEST(FeatureMapSample, RampOracle) {
  const std::size_t h = 6, w = 9;
  Tensor fx = ramp_x(h, w, 1), fy = ramp_y(h, w);
  Rng rng(8);
  Tensor pts = random_tensor({2, 5, 2}, rng, 0.12, 0.9);
  Tensor sx = sample_feature_map(fx, pts), sy = sample_feature_map(fy, pts);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t m = 0; m < 5; ++m) {
      EXPECT_NEAR(sx.at({n, m, 0}), pts.at({n, m, 0}) * w, 1e-9);
      EXPECT_NEAR(sy.at({n, m, 0}), pts.at({n, m, 1}) * h, 1e-9);
    }
  }
}
