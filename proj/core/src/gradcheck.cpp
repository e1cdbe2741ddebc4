#include "samdetr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "samdetr/aligner.hpp"
#include "samdetr/matching.hpp"
#include "samdetr/ops.hpp"
#include "samdetr/rng.hpp"
#include "samdetr/scene.hpp"

namespace samdetr {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, for ops with a kink or pole there.
Tensor away_from_zero(Rng& rng, Shape shape, double lo = 0.05, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Coordinate in (0,1) at least `margin` away from every multiple of 1/cells.
double off_grid(Rng& rng, double cells, double margin = 0.02) {
  for (;;) {
    const double u = rng.uniform(0.01, 0.99);
    const double t = u * cells;
    if (std::abs(t - std::round(t)) > margin) return u;
  }
}

double readout(const Tensor& out, const std::vector<double>& weights) {
  const auto d = out.data();
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += d[i] * weights[i];
  return s;
}

}  // namespace

GradCheckResult check_gradient(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                               const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = name;
  Rng rng(options.seed ^ 0xC0FFEEULL);
  for (auto& t : wrt) {
    if (!t.requires_grad() || !t.is_leaf()) throw ContractError("check_gradient: '" + name + "' needs leaf inputs");
    t.zero_grad();
  }

  std::vector<double> weights;
  {
    Graph graph;
    GraphScope scope(graph);
    Tensor out = f();
    weights.resize(out.numel());
    if (out.numel() == 1) weights[0] = 1.0;
    else for (double& w : weights) w = rng.uniform(-1.0, 1.0);
    Tensor loss = out.numel() == 1 ? reshape(out, {1}) : sum(mul(out, Tensor::from(out.shape(), weights)));
    backward(sum(loss));
  }

  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor& t = wrt[ti];
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_tensor);
    }
    auto data = t.mutable_data();
    auto central = [&](std::size_t i, double h) {
      const double saved = data[i];
      data[i] = saved + h;
      const double plus = readout(f(), weights);
      data[i] = saved - h;
      const double minus = readout(f(), weights);
      data[i] = saved;
      return (plus - minus) / (2.0 * h);
    };
    auto rel = [&](double x, double y) {
      return std::abs(x - y) / std::max({std::abs(x), std::abs(y), options.floor});
    };
    for (std::size_t i : coords) {
      const double numeric = central(i, options.step);
      const double a = analytic[i];
      const double err = rel(a, numeric);
      if (err > options.tolerance && std::abs(numeric - central(i, options.step / 4.0)) > 0.1 * std::abs(a - numeric)) {
        ++result.nonsmooth;
        continue;
      }
      if (result.coords == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
        result.worst_tensor = ti;
        result.worst_coord = i;
      }
      ++result.coords;
    }
    t.zero_grad();
  }
  return result;
}

std::vector<GradCheckResult> run_op_gradchecks(std::uint64_t seed, std::size_t trials) {
  using Case = std::function<GradCheckResult(Rng&, const GradCheckOptions&)>;
  std::vector<std::pair<std::string, Case>> cases;
  auto unary = [&](const std::string& name, std::function<Tensor(const Tensor&)> op, bool avoid_zero,
                   double lo = -1.0, double hi = 1.0) {
    cases.emplace_back(name, [=](Rng& rng, const GradCheckOptions& o) {
      Tensor x = avoid_zero ? away_from_zero(rng, {3, 4}) : random_tensor(rng, {3, 4}, lo, hi);
      return check_gradient(name, [&] { return op(x); }, {x}, o);
    });
  };
  auto binary = [&](const std::string& name, std::function<Tensor(const Tensor&, const Tensor&)> op,
                    double gap = 0.0) {
    cases.emplace_back(name, [=](Rng& rng, const GradCheckOptions& o) {
      Tensor a = random_tensor(rng, {3, 4});
      Tensor b = random_tensor(rng, {3, 4});
      if (gap > 0.0) {
        auto bd = b.mutable_data();
        const auto ad = a.data();
        for (std::size_t i = 0; i < bd.size(); ++i) {
          if (std::abs(bd[i] - ad[i]) < gap) bd[i] = ad[i] + (bd[i] >= ad[i] ? gap : -gap);
        }
      }
      return check_gradient(name, [&] { return op(a, b); }, {a, b}, o);
    });
  };

  cases.emplace_back("matmul", [](Rng& rng, const GradCheckOptions& o) {
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5});
    return check_gradient("matmul", [&] { return matmul(a, b); }, {a, b}, o);
  });
  cases.emplace_back("bmm", [](Rng& rng, const GradCheckOptions& o) {
    Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 4, 5});
    return check_gradient("bmm", [&] { return bmm(a, b); }, {a, b}, o);
  });
  cases.emplace_back("bmm_transposed", [](Rng& rng, const GradCheckOptions& o) {
    Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 5, 4});
    return check_gradient("bmm_transposed", [&] { return bmm(a, b, true); }, {a, b}, o);
  });
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  cases.emplace_back("div", [](Rng& rng, const GradCheckOptions& o) {
    Tensor a = random_tensor(rng, {3, 4}), b = away_from_zero(rng, {3, 4}, 0.3, 1.5);
    return check_gradient("div", [&] { return div(a, b); }, {a, b}, o);
  });
  binary("minimum", [](const Tensor& a, const Tensor& b) { return minimum(a, b); }, 0.01);
  binary("maximum", [](const Tensor& a, const Tensor& b) { return maximum(a, b); }, 0.01);
  unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, false);
  unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, false);
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, false, -4.0, 4.0);
  unary("relu", [](const Tensor& x) { return relu(x); }, true);
  unary("softplus", [](const Tensor& x) { return softplus(x); }, false, -4.0, 4.0);
  unary("exp", [](const Tensor& x) { return exp(x); }, false);
  unary("log", [](const Tensor& x) { return log(x); }, false, 0.2, 3.0);
  unary("abs", [](const Tensor& x) { return abs(x); }, true);
  unary("square", [](const Tensor& x) { return square(x); }, false);
  cases.emplace_back("add_bias", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {4});
    return check_gradient("add_bias", [&] { return add_bias(x, b); }, {x, b}, o);
  });
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::string name = "softmax_axis" + std::to_string(axis);
    cases.emplace_back(name, [=](Rng& rng, const GradCheckOptions& o) {
      Tensor x = random_tensor(rng, {2, 3, 4}, -2.0, 2.0);
      return check_gradient(name, [&] { return softmax(x, axis); }, {x}, o);
    });
  }
  cases.emplace_back("layer_norm", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 6}, -2.0, 2.0), g = random_tensor(rng, {6}, 0.5, 1.5), b = random_tensor(rng, {6});
    return check_gradient("layer_norm", [&] { return layer_norm(x, g, b); }, {x, g, b}, o);
  });
  cases.emplace_back("conv2d", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 5, 5}), k = random_tensor(rng, {3, 2, 3, 3}), b = random_tensor(rng, {3});
    return check_gradient("conv2d", [&] { return conv2d(x, k, b, 1, 1); }, {x, k, b}, o);
  });
  cases.emplace_back("conv2d_batched_stride2", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 2, 6, 6}), k = random_tensor(rng, {3, 2, 3, 3}), b = random_tensor(rng, {3});
    return check_gradient("conv2d_batched_stride2", [&] { return conv2d(x, k, b, 2, 1); }, {x, k, b}, o);
  });
  cases.emplace_back("conv2d_1x1", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 4, 4}), k = random_tensor(rng, {2, 3, 1, 1});
    return check_gradient("conv2d_1x1", [&] { return conv2d(x, k, 1, 0); }, {x, k}, o);
  });
  cases.emplace_back("concat", [](Rng& rng, const GradCheckOptions& o) {
    Tensor a = random_tensor(rng, {2, 3, 2}), b = random_tensor(rng, {2, 1, 2});
    return check_gradient("concat", [&] { return concat({a, b, a}, 1); }, {a, b}, o);
  });
  cases.emplace_back("slice", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 5, 2});
    return check_gradient("slice", [&] { return slice(x, 1, 1, 4); }, {x}, o);
  });
  cases.emplace_back("reshape", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 4});
    return check_gradient("reshape", [&] { return reshape(x, {2, 6}); }, {x}, o);
  });
  cases.emplace_back("transpose", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 3, 4});
    return check_gradient("transpose", [&] { return transpose(x, 0, 2); }, {x}, o);
  });
  cases.emplace_back("permute", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 3, 4});
    return check_gradient("permute", [&] { return permute(x, {1, 2, 0}); }, {x}, o);
  });
  cases.emplace_back("index_select", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {4, 3});
    return check_gradient("index_select", [&] { return index_select(x, {2, 0, 2}); }, {x}, o);
  });
  cases.emplace_back("reduce_mean", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {2, 3, 4});
    return check_gradient("reduce_mean", [&] { return reduce_mean(x, 1); }, {x}, o);
  });
  cases.emplace_back("reduce_max", [](Rng& rng, const GradCheckOptions& o) {
    // distinct values so the arg-max is stable under the perturbation
    std::vector<double> v(24);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    Tensor x = Tensor::from({2, 3, 4}, v, true);
    return check_gradient("reduce_max", [&] { return reduce_max(x, 2); }, {x}, o);
  });
  cases.emplace_back("sum", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 4});
    return check_gradient("sum", [&] { return sum(square(x)); }, {x}, o);
  });
  cases.emplace_back("mean", [](Rng& rng, const GradCheckOptions& o) {
    Tensor x = random_tensor(rng, {3, 4});
    return check_gradient("mean", [&] { return mean(square(x)); }, {x}, o);
  });

  // nn blocks
  cases.emplace_back("linear", [](Rng& rng, const GradCheckOptions& o) {
    ParameterSet ps;
    Linear l = make_linear(ps, "l", 4, 3, rng);
    l.bias.mutable_data()[1] = 0.2;
    Tensor x = random_tensor(rng, {5, 4});
    return check_gradient("linear", [&] { return linear(x, l); }, {x, l.weight, l.bias}, o);
  });
  cases.emplace_back("mlp", [](Rng& rng, const GradCheckOptions& o) {
    ParameterSet ps;
    Mlp net = make_mlp(ps, "m", {4, 6, 6, 2}, rng);
    for (auto& p : ps.entries()) {
      for (double& v : p.value.mutable_data()) v += 0.1 * rng.uniform(-1.0, 1.0);
    }
    Tensor x = random_tensor(rng, {3, 4});
    std::vector<Tensor> wrt{x};
    for (auto& p : ps.entries()) wrt.push_back(p.value);
    return check_gradient("mlp", [&] { return mlp(x, net); }, wrt, o);
  });
  cases.emplace_back("multi_head_attention", [](Rng& rng, const GradCheckOptions& o) {
    ParameterSet ps;
    AttentionParams a = make_attention(ps, "a", 8, 2, rng);
    Tensor q = random_tensor(rng, {3, 8}), qp = random_tensor(rng, {3, 8});
    Tensor k = random_tensor(rng, {5, 8}), kp = random_tensor(rng, {5, 8}), v = random_tensor(rng, {5, 8});
    Tensor bias = random_tensor(rng, {2, 3, 5});
    std::vector<Tensor> wrt{q, qp, k, kp, v, bias, a.w_q, a.w_k, a.w_v, a.w_o};
    return check_gradient("multi_head_attention", [&] { return multi_head_attention(q, qp, k, kp, v, a, bias).out; },
                          wrt, o);
  });
  cases.emplace_back("attention_weights", [](Rng& rng, const GradCheckOptions& o) {
    ParameterSet ps;
    AttentionParams a = make_attention(ps, "a", 8, 4, rng);
    Tensor q = random_tensor(rng, {2, 8}), k = random_tensor(rng, {6, 8}), kp = random_tensor(rng, {6, 8});
    Tensor qp = random_tensor(rng, {2, 8});
    return check_gradient("attention_weights",
                          [&] { return multi_head_attention(q, qp, k, kp, k, a).weights; }, {q, k, a.w_q, a.w_k}, o);
  });
  cases.emplace_back("sinusoidal_embed_points", [](Rng& rng, const GradCheckOptions& o) {
    Tensor c = random_tensor(rng, {3, 2}, 0.0, 1.0);
    return check_gradient("sinusoidal_embed_points", [&] { return sinusoidal_embed_points(c, 8); }, {c}, o);
  });
  cases.emplace_back("focal_loss", [](Rng& rng, const GradCheckOptions& o) {
    Tensor z = random_tensor(rng, {4, 3}, -3.0, 3.0);
    std::vector<int> t{0, kNoObject, 2, kNoObject};
    return check_gradient("focal_loss", [&] { return focal_loss(z, t); }, {z}, o);
  });
  cases.emplace_back("focal_loss_no_alpha", [](Rng& rng, const GradCheckOptions& o) {
    Tensor z = random_tensor(rng, {3, 2}, -3.0, 3.0);
    std::vector<int> t{1, 0, kNoObject};
    return check_gradient("focal_loss_no_alpha", [&] { return focal_loss(z, t, FocalParams{0.25, 2.0, false}); },
                          {z}, o);
  });

  // geometry
  cases.emplace_back("roi_align", [](Rng& rng, const GradCheckOptions& o) {
    Tensor f = random_tensor(rng, {6, 6, 3});
    std::vector<Box> boxes{{0.45, 0.5, 0.6, 0.4}, {0.3, 0.7, 0.35, 0.5}};
    for (auto& b : boxes) b.cx += rng.uniform(-0.01, 0.01);
    return check_gradient("roi_align", [&] { return roi_align(f, boxes).grid; }, {f}, o);
  });
  cases.emplace_back("bilinear_point_sample", [](Rng& rng, const GradCheckOptions& o) {
    RegionFeatures region{random_tensor(rng, {2, 7, 7, 3}), {{0.5, 0.5, 0.5, 0.5}, {0.4, 0.6, 0.3, 0.4}}};
    std::vector<double> pv(2 * 3 * 2);
    for (double& v : pv) v = off_grid(rng, 6.0);
    Tensor pts = Tensor::from({2, 3, 2}, pv, true);
    return check_gradient("bilinear_point_sample", [&] { return bilinear_point_sample(region, pts); },
                          {region.grid, pts}, o);
  });
  cases.emplace_back("sample_feature_map", [](Rng& rng, const GradCheckOptions& o) {
    Tensor f = random_tensor(rng, {5, 5, 2});
    std::vector<double> pv(2 * 2 * 2);
    // interior points away from the pixel-centre lattice (i + 0.5) / 5
    for (double& v : pv) {
      double u;
      do u = off_grid(rng, 5.0, 0.0); while (std::abs(u * 5.0 - 0.5 - std::round(u * 5.0 - 0.5)) < 0.02 || u < 0.12 || u > 0.88);
      v = u;
    }
    Tensor pts = Tensor::from({2, 2, 2}, pv, true);
    return check_gradient("sample_feature_map", [&] { return sample_feature_map(f, pts); }, {f, pts}, o);
  });

  // aligner and decoder
  auto aligner_case = [&](const std::string& name, ResampleStrategy strategy, bool reweight_on, SearchRange range) {
    cases.emplace_back(name, [=](Rng& rng, const GradCheckOptions& o) {
      const std::size_t d = 8, m = 2;
      AlignerConfig cfg;
      cfg.strategy = strategy;
      cfg.heads = m;
      cfg.reweight = reweight_on;
      cfg.search_range = range;
      ParameterSet ps;
      AlignerParams params = make_aligner(ps, "al", d, 4, cfg, rng);
      for (auto& p : ps.entries()) {
        for (double& v : p.value.mutable_data()) v += 0.05 * rng.uniform(-1.0, 1.0);
      }
      EncodedFeatures enc{random_tensor(rng, {4, 4, d}), Tensor::zeros({4, 4, d})};
      QuerySet qs;
      qs.q = random_tensor(rng, {2, d});
      qs.q_pos = Tensor::zeros({2, d});
      qs.box_logits = Tensor::from({2, 4}, {0.1, -0.2, -0.4, -0.6, -0.5, 0.3, -0.8, -0.2});
      qs.boxes = boxes_from_logits(qs.box_logits);
      std::vector<Tensor> wrt{enc.features, qs.q};
      for (auto& p : ps.entries()) wrt.push_back(p.value);
      return check_gradient(name, [&] {
        AlignerOutput out = aligner_forward(enc, qs, params, cfg);
        return concat({out.q, out.q_pos, reshape(out.points.image, {2, 2 * m})}, 1);
      }, wrt, o);
    });
  };
  aligner_case("aligner_spm_reweight", ResampleStrategy::kSpm, true, SearchRange::kWithinBox);
  aligner_case("aligner_spm", ResampleStrategy::kSpm, false, SearchRange::kWithinBox);
  aligner_case("aligner_sp1", ResampleStrategy::kSp1, false, SearchRange::kWithinBox);
  aligner_case("aligner_avg", ResampleStrategy::kAvg, false, SearchRange::kWithinBox);
  aligner_case("aligner_spm_image_range", ResampleStrategy::kSpm, true, SearchRange::kWithinImage);
  cases.emplace_back("aligner_max", [](Rng& rng, const GradCheckOptions& o) {
    // max pooling on a grid whose values are distinct and well separated
    std::vector<double> v(2 * 49 * 4);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    RegionFeatures region{Tensor::from({2, 7, 7, 4}, v, true), {{0.5, 0.5, 0.4, 0.4}, {0.5, 0.5, 0.4, 0.4}}};
    AlignerConfig cfg;
    cfg.strategy = ResampleStrategy::kMax;
    cfg.heads = 2;
    SalientPoints none;
    return check_gradient("aligner_max", [&] { return resample_queries(region, region, none, cfg); }, {region.grid},
                          o);
  });
  cases.emplace_back("gaussian_bias", [](Rng& rng, const GradCheckOptions& o) {
    Tensor c = random_tensor(rng, {2, 3, 2}, 0.0, 1.0), s = random_tensor(rng, {2, 3}, 0.2, 1.0);
    return check_gradient("gaussian_bias", [&] { return gaussian_bias(c, s, 3, 4); }, {c, s}, o);
  });
  cases.emplace_back("giou_rows", [](Rng& rng, const GradCheckOptions& o) {
    std::vector<double> p, t;
    for (int i = 0; i < 3; ++i) {
      p.insert(p.end(), {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5)});
      t.insert(t.end(), {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5)});
    }
    Tensor pred = Tensor::from({3, 4}, p, true), target = Tensor::from({3, 4}, t);
    return check_gradient("giou_rows", [&] { return giou_rows(pred, target); }, {pred}, o);
  });
  cases.emplace_back("decoder_layer_smca", [](Rng& rng, const GradCheckOptions& o) {
    ModelConfig cfg = micro_model_config(Variant::kSamSmca);
    Model model(cfg, rng.next());
    // zero biases over dead inputs would sit exactly on relu kinks
    for (auto& p : model.parameters().entries()) {
      for (double& v : p.value.mutable_data()) v += 0.05 * rng.uniform(-1.0, 1.0);
    }
    const std::size_t d = cfg.dim;
    EncodedFeatures enc{random_tensor(rng, {4, 4, d}), reshape(position_grid(4, 4, d), {4, 4, d})};
    QuerySet qs;
    qs.q = random_tensor(rng, {2, d});
    qs.q_pos = random_tensor(rng, {2, d});
    qs.box_logits = Tensor::from({2, 4}, {0.2, -0.1, -0.3, -0.5, -0.4, 0.3, -0.6, -0.2});
    qs.boxes = boxes_from_logits(qs.box_logits);
    std::vector<Tensor> wrt{enc.features, qs.q, qs.q_pos};
    for (auto& p : model.parameters().entries()) {
      if (p.name.rfind("decoder.0.", 0) == 0) wrt.push_back(p.value);
    }
    return check_gradient("decoder_layer_smca", [&] {
      DecoderStep step = decoder_layer(enc, qs, model.decoder()[0], model.head_for_layer(0), model.config());
      return concat({step.prediction.logits, step.prediction.boxes, step.q}, 1);
    }, wrt, o);
  });

  std::vector<GradCheckResult> results;
  Rng master(seed);
  for (const auto& [name, run] : cases) {
    GradCheckResult worst;
    worst.name = name;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng = master.fork();
      GradCheckOptions options;
      options.seed = rng.next();
      GradCheckResult r = run(rng, options);
      worst.coords += r.coords;
      worst.nonsmooth += r.nonsmooth;
      if (r.max_rel_error >= worst.max_rel_error) {
        worst.max_rel_error = r.max_rel_error;
        worst.worst_analytic = r.worst_analytic;
        worst.worst_numeric = r.worst_numeric;
        worst.worst_tensor = r.worst_tensor;
        worst.worst_coord = r.worst_coord;
      }
    }
    results.push_back(worst);
  }
  return results;
}

ModelConfig micro_model_config(Variant variant) {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.stride = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.queries = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.classes = 3;
  cfg.ffn_multiplier = 2;
  cfg.point_conv_channels = 4;
  cfg.variant = variant;
  return cfg;
}

GradCheckResult run_end_to_end_gradcheck(Variant variant, std::uint64_t seed, std::size_t max_coords_per_tensor) {
  const ModelConfig cfg = micro_model_config(variant);
  Model model(cfg, seed);
  Rng rng(seed + 17);
  // Nudge every parameter off its initial value so zero-initialised layers
  // carry gradient into the rest of the network.
  for (auto& p : model.parameters().entries()) {
    for (double& v : p.value.mutable_data()) v += 0.05 * rng.uniform(-1.0, 1.0);
  }
  SceneConfig scene_cfg;
  scene_cfg.image_size = cfg.image_size;
  scene_cfg.min_extent = 4.0;
  scene_cfg.max_extent = 8.0;
  scene_cfg.max_objects = 2;
  const SceneSample scene = generate_scene(seed, scene_cfg);

  std::vector<MatchResult> matches;
  for (const auto& layer : model.forward(scene.image).layers) {
    matches.push_back(hungarian(matching_cost(layer, scene.gts)));
  }
  std::vector<Tensor> wrt;
  for (auto& p : model.parameters().entries()) {
    if (p.name == "query.ref_box_logits" && variant != Variant::kBaseline) continue;
    wrt.push_back(p.value);
  }
  GradCheckOptions options;
  options.seed = seed;
  options.max_coords_per_tensor = max_coords_per_tensor;
  options.tolerance = 1e-3;
  return check_gradient(std::string("end_to_end_") + to_string(variant),
                        [&] { return detection_loss(model.forward(scene.image), scene.gts, {}, {}, &matches).total; },
                        wrt, options);
}

}  // namespace samdetr
