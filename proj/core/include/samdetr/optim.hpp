#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "samdetr/nn.hpp"

namespace samdetr {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// First and second moment buffers of one parameter.
struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One AdamW update of a single parameter. Weight decay is applied to the
/// parameter directly (decoupled), then the bias-corrected Adam step.
/// `step` is the 1-based step count after incrementing.
void adamw_update(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t step,
                  double lr, const AdamWConfig& config);

/// AdamW over a ParameterSet, honouring each parameter's lr_scale.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  /// Applies one update using the gradients currently stored on the parameters.
  void step(ParameterSet& params);

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<Moments>& state() const { return moments_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace samdetr
