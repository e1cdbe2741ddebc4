// Acceptance gate: one PASS/FAIL line per criterion. Heavy criteria (5-7)
// train full-size models and take most of the runtime.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "samdetr/aligner.hpp"
#include "samdetr/checkpoint.hpp"
#include "samdetr/config.hpp"
#include "samdetr/gradcheck.hpp"
#include "samdetr/matching.hpp"
#include "samdetr/model.hpp"
#include "samdetr/ops.hpp"
#include "samdetr/train.hpp"
#include "samdetr/visualize.hpp"

using namespace samdetr;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int g_failed = 0;

void verdict(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

void note(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

std::vector<MetricsRow> read_metrics(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  if (line != kMetricsHeader) throw std::runtime_error("bad metrics header in " + p.string());
  std::vector<MetricsRow> rows;
  while (std::getline(f, line)) {
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &r.step, &r.train_loss, &r.val_ap50, &r.wall_ms) != 4) {
      throw std::runtime_error("bad metrics row '" + line + "' in " + p.string());
    }
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------- 1
void criterion_gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0.0, worst_e2e = 0.0;
  std::string worst_op_name, worst_e2e_name;
  std::size_t ops = 0, nonsmooth = 0, coords = 0;
  for (const auto& r : run_op_gradchecks(2024, 10)) {
    ++ops;
    coords += r.coords;
    nonsmooth += r.nonsmooth;
    if (r.max_rel_error >= worst_op) {
      worst_op = r.max_rel_error;
      worst_op_name = r.name;
    }
  }
  for (Variant v : {Variant::kBaseline, Variant::kSam, Variant::kSamSmca}) {
    const auto r = run_end_to_end_gradcheck(v, 2024);
    coords += r.coords;
    nonsmooth += r.nonsmooth;
    if (r.max_rel_error >= worst_e2e) {
      worst_e2e = r.max_rel_error;
      worst_e2e_name = r.name;
    }
  }
  const double secs = seconds_since(t0);
  note(std::to_string(ops) + " op checks, " + std::to_string(coords) + " coordinates, " + std::to_string(nonsmooth) +
       " kink straddles excluded");
  verdict(1, worst_op < 1e-4 && worst_e2e < 1e-3 && secs < 120.0,
          "max rel err per-op " + fmt("%.2e", worst_op) + " (" + worst_op_name + ") < 1e-4, end-to-end " +
              fmt("%.2e", worst_e2e) + " (" + worst_e2e_name + ") < 1e-3, runtime " + fmt("%.1f", secs) +
              " s < 120 s");
}

// ---------------------------------------------------------------- 2
double brute_force(const CostMatrix& c) {
  const bool t = c.rows > c.cols;
  const std::size_t n = t ? c.cols : c.rows, m = t ? c.rows : c.cols;
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += t ? c(perm[i], i) : c(i, perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<double> naive_conv(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0), ks = k.dim(2);
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  std::vector<double> out(co * ho * wo, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              out[(o * ho + y) * wo + xx] +=
                  k.at({o, c, ky, kx}) * x.at({c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)});
            }
  return out;
}

void criterion_oracles() {
  Rng rng(7);
  // Hungarian, integer costs so totals compare exactly
  std::size_t matrices = 0, mismatches = 0;
  for (std::size_t r = 1; r <= 6; ++r) {
    for (std::size_t c = 1; c <= 6; ++c) {
      for (int t = 0; t < 100; ++t) {
        CostMatrix m(r, c);
        for (double& v : m.values) v = static_cast<double>(rng.below(100)) - 30.0;
        ++matrices;
        if (hungarian(m).total_cost(m) != brute_force(m)) ++mismatches;
      }
    }
  }
  note("hungarian: " + std::to_string(mismatches) + " mismatches over " + std::to_string(matrices) +
       " matrices (all shapes up to 6x6)");

  // ramps f = x and f = y at pixel centres (pixel units)
  double roi_err = 0.0, pt_err = 0.0, map_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 4 + rng.below(9), w = 4 + rng.below(9);
    Tensor ramp = Tensor::zeros({h, w, 2});
    auto d = ramp.mutable_data();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        d[(y * w + x) * 2] = static_cast<double>(x) + 0.5;
        d[(y * w + x) * 2 + 1] = static_cast<double>(y) + 0.5;
      }
    // box whose bin centres stay inside the pixel-centre hull
    const double mx = 0.5 / w, my = 0.5 / h;
    const double bw = rng.uniform(0.05, 1.0 - 2 * mx), bh = rng.uniform(0.05, 1.0 - 2 * my);
    const double x1 = rng.uniform(mx, 1.0 - mx - bw), y1 = rng.uniform(my, 1.0 - my - bh);
    RegionFeatures region = roi_align(ramp, {from_corners(Corners{x1, y1, x1 + bw, y1 + bh})});
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        roi_err = std::max(roi_err, std::abs(region.grid.at({0, i, j, 0}) - (x1 + (j + 0.5) * bw / 7) * w));
        roi_err = std::max(roi_err, std::abs(region.grid.at({0, i, j, 1}) - (y1 + (i + 0.5) * bh / 7) * h));
      }
    // grid ramp g(u, v) = (u, v)
    Tensor grid = Tensor::zeros({1, 7, 7, 2});
    auto gd = grid.mutable_data();
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        gd[(i * 7 + j) * 2] = j / 6.0;
        gd[(i * 7 + j) * 2 + 1] = i / 6.0;
      }
    Tensor pts = random_tensor({1, 16, 2}, rng, 0.0, 1.0);
    Tensor s = bilinear_point_sample(RegionFeatures{grid, {Box{}}}, pts);
    for (std::size_t k = 0; k < 32; ++k) pt_err = std::max(pt_err, std::abs(s.data()[k] - pts.data()[k]));
    Tensor img_pts = Tensor::zeros({1, 16, 2});
    auto ip = img_pts.mutable_data();
    for (std::size_t k = 0; k < 16; ++k) {
      ip[2 * k] = rng.uniform(mx, 1.0 - mx);
      ip[2 * k + 1] = rng.uniform(my, 1.0 - my);
    }
    Tensor ms = sample_feature_map(ramp, img_pts);
    for (std::size_t k = 0; k < 16; ++k) {
      map_err = std::max(map_err, std::abs(ms.at({0, k, 0}) - ip[2 * k] * w));
      map_err = std::max(map_err, std::abs(ms.at({0, k, 1}) - ip[2 * k + 1] * h));
    }
  }
  note("ramp oracles: roi_align " + fmt("%.2e", roi_err) + ", point sample " + fmt("%.2e", pt_err) +
       ", feature-map sample " + fmt("%.2e", map_err));

  double conv_err = 0.0;
  for (int t = 0; t < 40; ++t) {
    const std::size_t ks = 1 + 2 * rng.below(3), stride = 1 + rng.below(2), pad = rng.below(ks / 2 + 1);
    const std::size_t ci = 1 + rng.below(4), co = 1 + rng.below(4), h = ks + rng.below(8), w = ks + rng.below(8);
    Tensor x = random_tensor({ci, h, w}, rng, -1, 1), k = random_tensor({co, ci, ks, ks}, rng, -1, 1);
    Tensor y = conv2d(x, k, stride, pad);
    const auto ref = naive_conv(x, k, stride, pad);
    for (std::size_t i = 0; i < ref.size(); ++i) conv_err = std::max(conv_err, std::abs(y.data()[i] - ref[i]));
  }
  note("conv2d vs six-loop oracle: " + fmt("%.2e", conv_err));
  verdict(2, mismatches == 0 && roi_err <= 1e-9 && pt_err <= 1e-9 && map_err <= 1e-9 && conv_err <= 1e-12,
          "hungarian exact on " + std::to_string(matrices) + " matrices, ramps <= 1e-9, conv <= 1e-12");
}

// ---------------------------------------------------------------- 3
void criterion_alignment() {
  Rng rng(33);
  const ResampleStrategy strategies[] = {ResampleStrategy::kSpm, ResampleStrategy::kSp1, ResampleStrategy::kAvg,
                                         ResampleStrategy::kMax};
  std::size_t violations = 0, checked = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t dim = inst % 2 == 0 ? 32 : 64, heads = 8;
    AlignerConfig cfg;
    cfg.strategy = strategies[inst % 4];
    cfg.heads = heads;
    cfg.reweight = false;
    cfg.search_range = (inst / 4) % 2 == 0 ? SearchRange::kWithinBox : SearchRange::kWithinImage;
    ParameterSet ps;
    Rng init = rng.fork();
    AlignerParams params = make_aligner(ps, "al", dim, 8, cfg, init);
    const std::size_t side = 4 + rng.below(6), n = 1 + rng.below(8);
    EncodedFeatures enc{random_tensor({side, side, dim}, rng, -3, 3), position_grid(side, side, dim)};
    QuerySet qs;
    qs.q = random_tensor({n, dim}, rng, -1, 1);
    qs.q_pos = Tensor::zeros({n, dim});
    qs.box_logits = random_tensor({n, 4}, rng, -2.5, 2.5);
    qs.boxes = boxes_from_logits(qs.box_logits);
    AlignerOutput out = aligner_forward(enc, qs, params, cfg);
    // per output channel, the source channel and the map it was sampled from
    const bool reduced = cfg.uses_points();
    Tensor source = reduced ? linear(enc.features, params.value_reduce) : enc.features;
    const std::size_t width = source.dim(2);
    std::vector<double> lo(width, std::numeric_limits<double>::infinity()), hi(width, -lo[0]);
    for (std::size_t p = 0; p < side * side; ++p)
      for (std::size_t c = 0; c < width; ++c) {
        lo[c] = std::min(lo[c], source.data()[p * width + c]);
        hi[c] = std::max(hi[c], source.data()[p * width + c]);
      }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dim; ++k) {
        const std::size_t c = k % width;
        const double v = out.q.at({i, k});
        const double slack = 1e-12 * std::max(1.0, std::abs(v));
        ++checked;
        if (v < lo[c] - slack || v > hi[c] + slack) ++violations;
      }
    }
  }
  verdict(3, violations == 0,
          std::to_string(violations) + " containment violations over 1000 instances (" + std::to_string(checked) +
              " channels; strategies spm/sp1/avg/max, both search ranges, reweight off)");
}

// ---------------------------------------------------------------- 4
// Points of every query against its clipped reference box.
std::size_t count_outside(const SalientPoints& pts, const std::vector<Box>& boxes, std::size_t& total) {
  std::size_t bad = 0;
  for (std::size_t i = 0; i < pts.count(); ++i) {
    const Corners c = clip_to_image(boxes[i]);
    for (std::size_t m = 0; m < pts.per_query(); ++m) {
      const double x = pts.image.at({i, m, 0}), y = pts.image.at({i, m, 1});
      const double u = pts.box_relative.at({i, m, 0}), v = pts.box_relative.at({i, m, 1});
      const double eps = 1e-12;
      ++total;
      if (u < 0 || u > 1 || v < 0 || v > 1 || x < c.x1 - eps || x > c.x2 + eps || y < c.y1 - eps || y > c.y2 + eps) {
        ++bad;
      }
    }
  }
  return bad;
}

std::size_t check_model_points(const Model& model, const std::vector<SceneSample>& scenes, std::size_t& total) {
  std::size_t bad = 0;
  const auto boxes = boxes_from_logits(model.reference_box_logits());
  for (const auto& s : scenes) {
    DetectionOutput out = model.forward(s.image);
    for (const auto& layer : out.layers) {
      if (layer.points) bad += count_outside(*layer.points, boxes, total);
    }
  }
  return bad;
}

void criterion_point_range(const std::vector<fs::path>& trained_runs, const std::vector<RunConfig>& trained_cfgs) {
  Rng rng(44);
  std::size_t total = 0, bad = 0;
  // random aligners with weights well beyond their initial scale
  for (int inst = 0; inst < 500; ++inst) {
    AlignerConfig cfg;
    cfg.strategy = inst % 2 == 0 ? ResampleStrategy::kSpm : ResampleStrategy::kSp1;
    cfg.heads = 8;
    cfg.reweight = false;
    ParameterSet ps;
    Rng init = rng.fork();
    AlignerParams params = make_aligner(ps, "al", 32, 8, cfg, init);
    for (auto& p : ps.entries())
      for (double& v : p.value.mutable_data()) v += rng.uniform(-0.5, 0.5);
    const std::size_t n = 1 + rng.below(8);
    Tensor logits = random_tensor({n, 4}, rng, -3, 3);
    const auto boxes = boxes_from_logits(logits);
    RegionFeatures region = roi_align(random_tensor({6, 6, 32}, rng, -2, 2), boxes);
    bad += count_outside(predict_salient_points(region, params, cfg), boxes, total);
  }
  // random full models
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (Variant v : {Variant::kSam, Variant::kSamSmca}) {
      ModelConfig mc;
      mc.variant = v;
      Model m(mc, 1000 + seed);
      std::vector<SceneSample> scenes;
      for (std::uint64_t k = 0; k < 5; ++k) scenes.push_back(generate_scene(scene_seed(seed, 77, k)));
      bad += check_model_points(m, scenes, total);
    }
  }
  const std::size_t random_total = total;
  // trained models on their validation split
  for (std::size_t i = 0; i < trained_runs.size(); ++i) {
    Model m = load_model(trained_cfgs[i], (trained_runs[i] / "model.ckpt").string());
    bad += check_model_points(m, make_split(trained_cfgs[i], Split::kVal), total);
  }
  verdict(4, bad == 0 && !trained_runs.empty(),
          std::to_string(bad) + " of " + std::to_string(total) + " salient points outside their clipped box (" +
              std::to_string(random_total) + " from random models, " + std::to_string(total - random_total) +
              " from " + std::to_string(trained_runs.size()) + " trained models)");
}

// ---------------------------------------------------------------- 5-7
struct ArmResult {
  std::vector<MetricsRow> rows;
  double final_loss() const { return rows.back().train_loss; }
  double final_ap() const { return rows.back().val_ap50; }
  double wall_s() const { return rows.back().wall_ms / 1000.0; }
};

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

RunConfig default_run(std::uint64_t seed, const fs::path& out) {
  RunConfig r;  // spec defaults: 500/100 scenes, N=16, d=64, L=2, 2000 steps
  r.seed = seed;
  r.out = out.string();
  return r;
}

void criteria_experiments(const fs::path& work, std::vector<fs::path>& trained, std::vector<RunConfig>& trained_cfgs,
                          const std::set<int>& wanted) {
  std::map<std::string, std::vector<ArmResult>> arms;  // arm -> per seed
  std::vector<ArmResult> smca;
  const bool need_ablation = wanted.count(5) || wanted.count(6) || wanted.count(7) || wanted.count(4);
  for (std::uint64_t seed : kSeeds) {
    if (!need_ablation) break;
    const fs::path dir = work / ("ablation_seed" + std::to_string(seed));
    fs::remove_all(dir);
    const auto t0 = Clock::now();
    run_ablation(default_run(seed, dir));
    note("seed " + std::to_string(seed) + ": ablation (" + std::to_string(ablation_arms().size()) + " arms) took " +
         fmt("%.0f", seconds_since(t0)) + " s");
    for (const auto& arm : ablation_arms()) arms[arm.name].push_back(ArmResult{read_metrics(dir / arm.name / "metrics.csv")});
    RunConfig spm = default_run(seed, dir / "spm+rw");
    trained.push_back(dir / "spm+rw");
    trained_cfgs.push_back(spm);
    if (wanted.count(7)) {
      RunConfig s = default_run(seed, work / ("smca_seed" + std::to_string(seed)));
      s.model.variant = Variant::kSamSmca;
      fs::remove_all(s.out);
      train(s);
      smca.push_back(ArmResult{read_metrics(fs::path(s.out) / "metrics.csv")});
      trained.push_back(s.out);
      trained_cfgs.push_back(s);
    }
  }
  if (!need_ablation) return;

  for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
    std::string line = "seed " + std::to_string(kSeeds[i]) + " final loss / AP50:";
    for (const auto& arm : ablation_arms()) {
      const auto& r = arms[arm.name][i];
      line += " " + arm.name + " " + fmt("%.4f", r.final_loss()) + "/" + fmt("%.4f", r.final_ap());
    }
    if (!smca.empty()) line += " sam-smca " + fmt("%.4f", smca[i].final_loss()) + "/" + fmt("%.4f", smca[i].final_ap());
    note(line);
  }

  if (wanted.count(5)) {
    int seeds_a = 0, seeds_b = 0;
    double wall = 0.0;
    for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
      const auto& base = arms["baseline"][i];
      const auto& sam = arms["spm+rw"][i];
      bool lower = true;
      std::size_t points = 0;
      for (std::size_t k = 0; k < sam.rows.size(); ++k) {
        if (sam.rows[k].step <= 500) continue;
        ++points;
        lower = lower && sam.rows[k].train_loss < base.rows[k].train_loss;
      }
      seeds_a += lower && points > 0;
      seeds_b += sam.final_ap() >= base.final_ap() + 0.05;
      wall += base.wall_s() + sam.wall_s();
      note("seed " + std::to_string(kSeeds[i]) + ": loss below baseline at all " + std::to_string(points) +
           " eval points after 500: " + (lower ? "yes" : "no") + ", AP50 " + fmt("%.4f", sam.final_ap()) + " vs " +
           fmt("%.4f", base.final_ap()));
    }
    verdict(5, seeds_a >= 2 && seeds_b >= 2 && wall < 45 * 60,
            "(a) lower loss after step 500 in " + std::to_string(seeds_a) + "/3 seeds, (b) AP50 >= baseline + 0.05 in " +
                std::to_string(seeds_b) + "/3 seeds, baseline+SAM training time " + fmt("%.1f", wall / 60) +
                " min < 45 min");
  }
  if (wanted.count(6)) {
    int ok = 0;
    for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
      auto loss = [&](const char* a) { return arms[a][i].final_loss(); };
      const bool pass =
          loss("spm+rw") <= loss("spm") && loss("spm") <= loss("sp1") && loss("max") <= loss("avg");
      ok += pass;
    }
    bool csv = true;
    for (std::uint64_t seed : kSeeds) {
      const fs::path p = work / ("ablation_seed" + std::to_string(seed)) / "ablation.csv";
      std::ifstream f(p);
      std::string header;
      std::getline(f, header);
      std::size_t lines = 0;
      for (std::string l; std::getline(f, l);) ++lines;
      csv = csv && header == kAblationHeader && lines == ablation_arms().size();
    }
    verdict(6, ok >= 2 && csv,
            "SPM+RW <= SPM <= SP1 and MAX <= AVG in " + std::to_string(ok) + "/3 seeds; ablation.csv " +
                (csv ? "written" : "missing or malformed"));
  }
  if (wanted.count(7)) {
    int ok = 0;
    for (std::size_t i = 0; i < std::size(kSeeds); ++i) ok += smca[i].final_ap() >= arms["spm+rw"][i].final_ap();
    verdict(7, ok >= 2, "SAM-SMCA AP50 >= SAM in " + std::to_string(ok) + "/3 seeds");
  }
}

// ---------------------------------------------------------------- extra
// Trained model, one-object scenes: points of the best-matching query inside the GT box.
void one_object_check(const std::vector<fs::path>& runs, const std::vector<RunConfig>& cfgs) {
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (cfgs[r].model.variant != Variant::kSam) continue;
    Model m = load_model(cfgs[r], (runs[r] / "model.ckpt").string());
    SceneConfig sc = scene_config_for(cfgs[r].model);
    sc.min_objects = sc.max_objects = 1;
    std::size_t scenes = 0, good = 0, points = 0;
    for (std::uint64_t k = 0; k < 50; ++k) {
      SceneSample s = generate_scene(scene_seed(cfgs[r].seed, 99, k), sc);
      DetectionOutput out = m.forward(s.image);
      const auto& last = out.final_layer();
      const std::size_t q = best_matching_query(last, s.gts[0].box);
      const std::size_t inside = points_inside(*last.points, q, s.gts[0].box);
      ++scenes;
      points += inside;
      good += inside >= 6;
    }
    note("one-object scenes, seed " + std::to_string(cfgs[r].seed) + ": >= 6 of 8 points inside the GT box in " +
         std::to_string(good) + "/" + std::to_string(scenes) + " scenes (mean " +
         fmt("%.2f", static_cast<double>(points) / scenes) + " inside)");
  }
}

// ---------------------------------------------------------------- 8
void criterion_determinism(const fs::path& work) {
  bool metrics_same = true, ckpt_same = true, roundtrip = true, pgm_ok = true;
  std::size_t pgms = 0;
  for (Variant v : {Variant::kBaseline, Variant::kSam, Variant::kSamSmca}) {
    std::string files[2][2];
    for (int rep = 0; rep < 2; ++rep) {
      RunConfig r = default_run(5, work / ("det_" + std::string(to_string(v)) + "_" + std::to_string(rep)));
      r.model.variant = v;
      r.steps = 12;
      r.eval_interval = 5;
      r.train_scenes = 16;
      r.val_scenes = 8;
      r.wall_clock = false;
      fs::remove_all(r.out);
      train(r);
      files[rep][0] = slurp(fs::path(r.out) / "metrics.csv");
      files[rep][1] = slurp(fs::path(r.out) / "model.ckpt");
      if (rep == 1) {
        Model m = load_model(r, (fs::path(r.out) / "model.ckpt").string());
        save_checkpoint(m.parameters(), fs::path(r.out) / "resaved.ckpt");
        roundtrip = roundtrip && slurp(fs::path(r.out) / "resaved.ckpt") == files[rep][1];
        const fs::path dump_dir = fs::path(r.out) / "attention";
        AttentionDump d = dump_attention(m, generate_scene(3, scene_config_for(r.model)), dump_dir);
        std::vector<fs::path> all = d.head_maps;
        all.insert(all.end(), d.query_maps.begin(), d.query_maps.end());
        all.push_back(dump_dir / "scene.pgm");
        for (const auto& p : all) {
          const std::string bytes = slurp(p);
          try {
            GrayImage g = decode_pgm(bytes);
            const bool header = bytes.compare(0, 2, "P5") == 0 && bytes.find("255") != std::string::npos;
            pgm_ok = pgm_ok && header && g.pixels.size() == g.width * g.height;
          } catch (const std::exception&) {
            pgm_ok = false;
          }
          ++pgms;
        }
        const std::size_t expected = v == Variant::kBaseline ? 0 : r.model.queries * r.model.heads;
        pgm_ok = pgm_ok && d.point_lines == expected;
      }
    }
    metrics_same = metrics_same && files[0][0] == files[1][0];
    ckpt_same = ckpt_same && files[0][1] == files[1][1];
  }
  verdict(8, metrics_same && ckpt_same && roundtrip && pgm_ok,
          std::string("metrics CSVs ") + (metrics_same ? "identical" : "DIFFER") + ", checkpoints " +
              (ckpt_same ? "identical" : "DIFFER") + ", checkpoint round-trip " +
              (roundtrip ? "byte-identical" : "DIFFERS") + ", " + std::to_string(pgms) + " PGM dumps " +
              (pgm_ok ? "parse" : "FAIL to parse"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work_dir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "scratch directory for training runs");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  std::set<int> wanted(only.begin(), only.end());
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8};

  const fs::path work(work_dir);
  fs::create_directories(work);
  const auto t0 = Clock::now();
  try {
    if (wanted.count(1)) criterion_gradients();
    if (wanted.count(2)) criterion_oracles();
    if (wanted.count(3)) criterion_alignment();
    std::vector<fs::path> trained;
    std::vector<RunConfig> trained_cfgs;
    criteria_experiments(work, trained, trained_cfgs, wanted);
    if (wanted.count(4)) criterion_point_range(trained, trained_cfgs);
    if (!trained.empty()) one_object_check(trained, trained_cfgs);
    if (wanted.count(8)) criterion_determinism(work);
  } catch (const std::exception& e) {
    std::printf("[FAIL] aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%zu criteria checked, %d failed, %.1f min\n", wanted.size(), g_failed, seconds_since(t0) / 60);
  return g_failed == 0 ? 0 : 1;
}
