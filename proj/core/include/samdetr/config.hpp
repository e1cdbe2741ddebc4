#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "samdetr/model.hpp"

namespace samdetr {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything needed to reproduce one training run.
struct RunConfig {
  ModelConfig model;
  std::uint64_t seed = 0;
  std::size_t steps = 2000;
  double lr = 1e-4;
  double backbone_lr_scale = 0.1;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;  // max global L2 norm, 0 disables
  std::optional<std::size_t> decay_step;  // defaults to floor(5/6 * steps)
  std::size_t batch_size = 4;
  std::size_t eval_interval = 250;
  std::size_t train_scenes = 500;
  std::size_t val_scenes = 100;
  std::string out = "runs/default";
  bool wall_clock = true;  // false writes wall_ms = 0 for byte-stable metrics

  std::size_t effective_decay_step() const { return decay_step ? *decay_step : steps * 5 / 6; }
  /// Throws ConfigError on the first violated constraint.
  void validate() const;
};

/// Known configuration keys, in the order they are written.
const std::vector<std::string>& config_keys();

/// Sets one key from its textual value. Unknown keys and malformed values
/// throw ConfigError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Applies flat `key = value` lines; '#' starts a comment.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source = "<text>");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Every key, one `key = value` line each; parsing it reproduces the config.
std::string format_config(const RunConfig& config);

}  // namespace samdetr
