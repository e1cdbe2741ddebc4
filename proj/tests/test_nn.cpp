#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "samdetr/nn.hpp"
#include "samdetr/ops.hpp"
#include "samdetr/optim.hpp"
#include "test_util.hpp"

using namespace samdetr;
using samdetr::testing::random_tensor;

namespace {

Tensor identity(std::size_t d) {
  Tensor t = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) t.mutable_data()[i * d + i] = 1.0;
  return t;
}

AttentionParams identity_attention(std::size_t d, std::size_t heads) {
  return AttentionParams{identity(d), identity(d), identity(d), identity(d), heads};
}

}  // namespace

TEST(Linear, IdentityWeights) {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = linear(x, Linear{identity(4), Tensor::zeros({4})});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Linear, ZeroWeightsGiveBias) {
  Rng rng(2);
  Tensor y = linear(random_tensor({3, 4}, rng), Linear{Tensor::zeros({4, 2}), Tensor::full({2}, 0.7)});
  for (double v : y.data()) EXPECT_EQ(v, 0.7);
}

TEST(Attention, SingleKeyGetsAllWeight) {
  Rng rng(3);
  ParameterSet ps;
  AttentionParams p = make_attention(ps, "a", 8, 2, rng);
  Tensor q = random_tensor({3, 8}, rng), qp = random_tensor({3, 8}, rng);
  Tensor k = random_tensor({1, 8}, rng), kp = random_tensor({1, 8}, rng), v = random_tensor({1, 8}, rng);
  AttentionResult r = multi_head_attention(q, qp, k, kp, v, p);
  for (double w : r.weights.data()) EXPECT_EQ(w, 1.0);
  Tensor proj = matmul(matmul(v, p.w_v), p.w_o);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(r.out.at({i, c}), proj.at({0, c}), 1e-14);
  }
}

TEST(Attention, AlignedQueryPicksItsKey) {
  const std::size_t d = 4;
  Tensor keys = identity(d);
  Tensor q = Tensor::from({1, d}, {0, 10, 0, 0});
  AttentionResult r = multi_head_attention(q, Tensor::zeros({1, d}), keys, Tensor::zeros({d, d}), keys,
                                           identity_attention(d, 1));
  // logit 10/sqrt(4) = 5 on the matching key, 0 elsewhere
  const double expected = std::exp(5.0) / (std::exp(5.0) + 3.0);
  EXPECT_NEAR(r.weights.at({0, 0, 1}), expected, 1e-12);
  EXPECT_GT(r.weights.at({0, 0, 1}), 0.97);
}

TEST(Attention, ScaledAlignedQueryExceedsNinetyNinePercent) {
  const std::size_t d = 4;
  Tensor keys = scale(identity(d), 10.0);
  Tensor q = Tensor::from({1, d}, {0, 0, 10, 0});
  AttentionResult r = multi_head_attention(q, Tensor::zeros({1, d}), keys, Tensor::zeros({d, d}), keys,
                                           identity_attention(d, 1));
  EXPECT_GT(r.weights.at({0, 0, 2}), 0.99);
}

TEST(Attention, ZeroQueryAveragesValues) {
  Rng rng(4);
  ParameterSet ps;
  AttentionParams p = make_attention(ps, "a", 8, 4, rng);
  Tensor k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  AttentionResult r = multi_head_attention(Tensor::zeros({2, 8}), Tensor::zeros({2, 8}), k, Tensor::zeros({5, 8}),
                                           v, p);
  for (double w : r.weights.data()) EXPECT_NEAR(w, 0.2, 1e-15);
  Tensor proj = matmul(matmul(reshape(reduce_mean(v, 0), {1, 8}), p.w_v), p.w_o);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(r.out.at({1, c}), proj.data()[c], 1e-12);
}

TEST(Attention, HeadsMustDivideWidth) {
  Rng rng(5);
  ParameterSet ps;
  AttentionParams p = make_attention(ps, "a", 8, 2, rng);
  p.heads = 3;
  EXPECT_THROW(p.validate(), DimensionError);
}

TEST(Attention, BiasRowsStillNormalised) {
  Rng rng(6);
  ParameterSet ps;
  AttentionParams p = make_attention(ps, "a", 8, 2, rng);
  Tensor q = random_tensor({3, 8}, rng), k = random_tensor({6, 8}, rng);
  Tensor bias = random_tensor({2, 3, 6}, rng, -30, 0);
  AttentionResult r = multi_head_attention(q, Tensor::zeros({3, 8}), k, Tensor::zeros({6, 8}), k, p, bias);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 3; ++i) {
      double acc = 0.0;
      for (std::size_t s = 0; s < 6; ++s) acc += r.weights.at({h, i, s});
      EXPECT_NEAR(acc, 1.0, 1e-12);
    }
  }
}

TEST(Sinusoid, OriginGivesSinZeroCosOne) {
  Tensor e = sinusoidal_embed_2d(0.0, 0.0, 16);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(e.data()[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Sinusoid, LowestFrequencyAtHalf) {
  Tensor e = sinusoidal_embed_2d(0.5, 0.5, 8);
  EXPECT_NEAR(e.data()[0], std::sin(std::numbers::pi), 1e-15);
  EXPECT_NEAR(e.data()[0], 0.0, 1e-12);
  EXPECT_NEAR(e.data()[1], -1.0, 1e-12);
}

TEST(Sinusoid, MatchesClosedForm) {
  const std::size_t d = 16;
  Tensor e = sinusoidal_embed_2d(0.3, 0.8, d);
  for (std::size_t half = 0; half < 2; ++half) {
    const double c = half == 0 ? 0.3 : 0.8;
    for (std::size_t i = 0; i < d / 4; ++i) {
      const double arg = 2 * std::numbers::pi * c / std::pow(kSinusoidTemperature, 4.0 * i / d);
      EXPECT_NEAR(e.data()[half * d / 2 + 2 * i], std::sin(arg), 1e-14);
      EXPECT_NEAR(e.data()[half * d / 2 + 2 * i + 1], std::cos(arg), 1e-14);
    }
  }
}

TEST(Sinusoid, PointsAgreeWithScalarVersion) {
  Tensor pts = Tensor::from({2, 2}, {0.1, 0.9, 0.6, 0.25});
  Tensor e = sinusoidal_embed_points(pts, 8);
  Tensor e1 = sinusoidal_embed_2d(0.6, 0.25, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e.at({1, i}), e1.data()[i]);
}

TEST(Focal, SaturatedCorrectIsZero) {
  Tensor l = focal_loss(Tensor::from({1, 1}, {100.0}), {0});
  EXPECT_NEAR(l.item(), 0.0, 1e-12);
}

TEST(Focal, ZeroLogitPositive) {
  Tensor l = focal_loss(Tensor::from({1, 1}, {0.0}), {0});
  EXPECT_NEAR(l.item(), -0.25 * 0.25 * std::log(0.5), 1e-12);
  EXPECT_NEAR(l.item(), 0.04332, 1e-5);
}

TEST(Focal, NoObjectRowUsesNegativeTerm) {
  // p = sigmoid(1): negative term is -(1-alpha) p^2 log(1-p), summed over classes.
  Tensor l = focal_loss(Tensor::from({1, 2}, {1.0, 1.0}), {kNoObject});
  const double p = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(l.item(), 2 * (-0.75 * p * p * std::log(1 - p)), 1e-12);
}

TEST(Focal, AlphaCanBeDisabled) {
  FocalParams fp;
  fp.use_alpha = false;
  Tensor l = focal_loss(Tensor::from({1, 1}, {0.0}), {0}, fp);
  EXPECT_NEAR(l.item(), -0.25 * std::log(0.5), 1e-12);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  Moments m;
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  adamw_update(p, g, m, 1, 0.1, cfg);
  EXPECT_DOUBLE_EQ(p[0], 1.0 * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(p[1], -2.0 * (1 - 0.1 * 0.01));
}

TEST(AdamW, FirstStepIsSignedLr) {
  std::vector<double> p{0.5, 0.5};
  const std::vector<double> g{0.3, -7.0};
  Moments m;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_update(p, g, m, 1, 0.01, cfg);
  EXPECT_NEAR(p[0], 0.5 - 0.01, 1e-9);
  EXPECT_NEAR(p[1], 0.5 + 0.01, 1e-9);
}

TEST(AdamW, MomentShapesFollowParameters) {
  ParameterSet ps;
  Tensor& w = ps.add("w", Tensor::full({2, 3}, 1.0, true));
  w.mutable_grad()[0] = 1.0;
  AdamW opt(AdamWConfig{});
  opt.step(ps);
  opt.step(ps);
  EXPECT_EQ(opt.step_count(), 2u);
  ASSERT_EQ(opt.state().size(), 1u);
  EXPECT_EQ(opt.state()[0].m.size(), 6u);
  EXPECT_EQ(opt.state()[0].v.size(), 6u);
}

TEST(AdamW, LrScaleApplies) {
  ParameterSet ps;
  Tensor a = ps.add("a", Tensor::full({1}, 0.0, true));
  Tensor b = ps.add("b", Tensor::full({1}, 0.0, true), 0.1);
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = 1.0;
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  opt.step(ps);
  EXPECT_NEAR(a.data()[0], -0.01, 1e-9);
  EXPECT_NEAR(b.data()[0], -0.001, 1e-9);
}
