#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdetr/config.hpp"
#include "samdetr/metrics.hpp"
#include "samdetr/model.hpp"
#include "samdetr/scene.hpp"

namespace samdetr {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean per-image loss since the previous row
  double val_ap50 = 0.0;
  double wall_ms = 0.0;
};

inline constexpr char kMetricsHeader[] = "step,train_loss,val_ap50,wall_ms";

std::string format_metrics_row(const MetricsRow& row);
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);

enum class Split : std::uint64_t { kTrain = 1, kVal = 2 };

SceneConfig scene_config_for(const ModelConfig& model);
std::vector<SceneSample> make_split(const RunConfig& run, Split split);

/// Set loss of one image under the loss weights used for training.
DetectionLoss image_loss(const Model& model, const SceneSample& scene);

/// AP50 of the final decoder layer over `scenes`.
double evaluate(const Model& model, const std::vector<SceneSample>& scenes);

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::size_t optimizer_steps = 0;
};

/// Observer called after each metrics row is appended.
using RowCallback = std::function<void(const MetricsRow&)>;

/// Trains `model` in place. Writes nothing to disk.
TrainResult train_model(Model& model, const RunConfig& run, const RowCallback& on_row = {});

/// Full run: builds the model from `run`, trains it and writes
/// `<out>/metrics.csv`, `<out>/model.ckpt` and `<out>/run.cfg`.
TrainResult train(const RunConfig& run, const RowCallback& on_row = {});

/// Seed used to initialise the model of a run.
std::uint64_t model_seed(const RunConfig& run);

/// Model of `run` with the checkpoint at `path` loaded.
Model load_model(const RunConfig& run, const std::string& checkpoint_path);

/// One arm of the ablation harness.
struct AblationArm {
  std::string name;
  Variant variant;
  ResampleStrategy strategy;
  bool reweight;
};

const std::vector<AblationArm>& ablation_arms();

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  MetricsRow final_row;
};

inline constexpr char kAblationHeader[] = "arm,variant,strategy,reweight,seed,steps,final_train_loss,final_val_ap50";

/// Runs every arm with the same seed and budget, each in `<out>/<arm>`, and
/// writes `<out>/ablation.csv`.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::function<void(const std::string&)>& log = {});

}  // namespace samdetr
