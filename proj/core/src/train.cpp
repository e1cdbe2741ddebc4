#include "samdetr/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "samdetr/checkpoint.hpp"
#include "samdetr/ops.hpp"
#include "samdetr/optim.hpp"
#include "samdetr/rng.hpp"

namespace samdetr {

namespace {

constexpr std::uint64_t kModelSalt = 3;
constexpr std::uint64_t kOrderSalt = 4;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TrainingError("cannot open " + path.string() + " for writing");
  f << text;
}

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params.entries()) {
    for (double g : p.value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params.entries()) {
      for (double& g : p.value.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  return std::to_string(row.step) + "," + fmt9(row.train_loss) + "," + fmt9(row.val_ap50) + "," + fmt9(row.wall_ms);
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

SceneConfig scene_config_for(const ModelConfig& model) {
  SceneConfig cfg;
  cfg.image_size = model.image_size;
  cfg.classes = model.classes;
  const double scale = static_cast<double>(model.image_size) / 64.0;
  cfg.min_extent *= scale;
  cfg.max_extent *= scale;
  return cfg;
}

std::vector<SceneSample> make_split(const RunConfig& run, Split split) {
  const std::size_t count = split == Split::kTrain ? run.train_scenes : run.val_scenes;
  const SceneConfig cfg = scene_config_for(run.model);
  std::vector<SceneSample> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(scene_seed(run.seed, static_cast<std::uint64_t>(split), i), cfg));
  }
  return scenes;
}

DetectionLoss image_loss(const Model& model, const SceneSample& scene) {
  return detection_loss(model.forward(scene.image), scene.gts);
}

double evaluate(const Model& model, const std::vector<SceneSample>& scenes) {
  std::vector<std::vector<Detection>> preds;
  std::vector<std::vector<GroundTruth>> gts;
  preds.reserve(scenes.size());
  for (const auto& s : scenes) {
    preds.push_back(detections_from(model.forward(s.image).final_layer()));
    gts.push_back(s.gts);
  }
  return evaluate_ap50(preds, gts);
}

std::uint64_t model_seed(const RunConfig& run) { return scene_seed(run.seed, kModelSalt, 0); }

TrainResult train_model(Model& model, const RunConfig& run, const RowCallback& on_row) {
  run.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const auto train_set = make_split(run, Split::kTrain);
  const auto val_set = make_split(run, Split::kVal);

  for (auto& p : model.parameters().entries()) {
    if (p.name.rfind("backbone.", 0) == 0) p.lr_scale = run.backbone_lr_scale;
  }
  AdamWConfig opt_cfg;
  opt_cfg.lr = run.lr;
  opt_cfg.weight_decay = run.weight_decay;
  AdamW optimizer(opt_cfg);
  const std::size_t decay_at = run.effective_decay_step();

  Rng order_rng(scene_seed(run.seed, kOrderSalt, 0));
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainResult result;
  double window_loss = 0.0;
  std::size_t window_images = 0;
  const double inv_batch = 1.0 / static_cast<double>(run.batch_size);
  for (std::size_t step = 1; step <= run.steps; ++step) {
    if (step == decay_at + 1) optimizer.set_lr(run.lr * 0.1);
    model.parameters().zero_grad();
    for (std::size_t b = 0; b < run.batch_size; ++b) {
      const SceneSample& scene = train_set[next_index()];
      Graph graph;
      GraphScope scope(graph);
      DetectionLoss loss = image_loss(model, scene);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite training loss at step " + std::to_string(step) + " (scene seed " +
                            std::to_string(scene.seed) + ")");
      }
      window_loss += value;
      ++window_images;
      backward(scale(loss.total, inv_batch));
    }
    clip_gradients(model.parameters(), run.grad_clip);
    optimizer.step(model.parameters());
    ++result.optimizer_steps;

    if (step % run.eval_interval == 0 || step == run.steps) {
      MetricsRow row;
      row.step = step;
      row.train_loss = window_loss / static_cast<double>(window_images);
      row.val_ap50 = evaluate(model, val_set);
      if (run.wall_clock) {
        row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      }
      window_loss = 0.0;
      window_images = 0;
      result.rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  model.parameters().zero_grad();
  return result;
}

TrainResult train(const RunConfig& run, const RowCallback& on_row) {
  run.validate();
  Model model(run.model, model_seed(run));
  const std::filesystem::path out(run.out);
  std::filesystem::create_directories(out);
  write_text(out / "run.cfg", format_config(run));
  TrainResult result = train_model(model, run, on_row);
  write_text(out / "metrics.csv", format_metrics_csv(result.rows));
  save_checkpoint(model.parameters(), out / "model.ckpt");
  return result;
}

Model load_model(const RunConfig& run, const std::string& checkpoint_path) {
  run.validate();
  Model model(run.model, model_seed(run));
  load_checkpoint(model.parameters(), checkpoint_path);
  return model;
}

const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = {
      {"baseline", Variant::kBaseline, ResampleStrategy::kSpm, false},
      {"avg", Variant::kSam, ResampleStrategy::kAvg, false},
      {"max", Variant::kSam, ResampleStrategy::kMax, false},
      {"sp1", Variant::kSam, ResampleStrategy::kSp1, false},
      {"spm", Variant::kSam, ResampleStrategy::kSpm, false},
      {"spm+rw", Variant::kSam, ResampleStrategy::kSpm, true},
  };
  return arms;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::function<void(const std::string&)>& log) {
  base.validate();
  const std::filesystem::path out(base.out);
  std::filesystem::create_directories(out);
  std::vector<AblationRow> rows;
  std::string csv = std::string(kAblationHeader) + "\n";
  for (const auto& arm : ablation_arms()) {
    RunConfig run = base;
    run.model.variant = arm.variant;
    run.model.aligner.strategy = arm.strategy;
    run.model.aligner.reweight = arm.reweight;
    run.out = (out / arm.name).string();
    if (log) log("arm " + arm.name);
    TrainResult r = train(run);
    AblationRow row{arm.name, base.seed, r.rows.back()};
    const bool aligned = arm.variant != Variant::kBaseline;
    csv += arm.name + "," + to_string(arm.variant) + "," + (aligned ? to_string(arm.strategy) : "none") + "," +
           (aligned && arm.reweight ? "true" : "false") + "," + std::to_string(base.seed) + "," +
           std::to_string(run.steps) + "," + fmt9(row.final_row.train_loss) + "," + fmt9(row.final_row.val_ap50) +
           "\n";
    rows.push_back(row);
  }
  write_text(out / "ablation.csv", csv);
  return rows;
}

}  // namespace samdetr
