#include "samdetr/optim.hpp"

#include <cmath>

namespace samdetr {

void adamw_update(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t step,
                  double lr, const AdamWConfig& config) {
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  if (grad.size() != param.size() || moments.m.size() != param.size() || moments.v.size() != param.size()) {
    throw DimensionError("adamw: parameter, gradient and moment sizes disagree (" + std::to_string(param.size()) +
                         ", " + std::to_string(grad.size()) + ", " + std::to_string(moments.m.size()) + ")");
  }
  if (step == 0) throw ContractError("adamw: step count starts at 1");
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const double step_size = lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] *= decay;
    moments.m[i] = config.beta1 * moments.m[i] + (1.0 - config.beta1) * grad[i];
    moments.v[i] = config.beta2 * moments.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double denom = std::sqrt(moments.v[i]) / sqrt_bc2 + config.eps;
    param[i] -= step_size * moments.m[i] / denom;
  }
}

void AdamW::step(ParameterSet& params) {
  auto& entries = params.entries();
  if (moments_.empty()) moments_.resize(entries.size());
  if (moments_.size() != entries.size()) {
    throw DimensionError("adamw: optimizer state tracks " + std::to_string(moments_.size()) + " parameters, got " +
                         std::to_string(entries.size()));
  }
  ++step_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& value = entries[i].value;
    adamw_update(value.mutable_data(), value.grad(), moments_[i], step_, config_.lr * entries[i].lr_scale, config_);
  }
}

}  // namespace samdetr
