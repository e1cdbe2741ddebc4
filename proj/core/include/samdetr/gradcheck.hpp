#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "samdetr/model.hpp"

namespace samdetr {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  /// Coordinates checked per tensor (0 checks all of them).
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Pass threshold the caller will apply. A coordinate above it gets a
  /// second difference at `step / 4`; if that moves the estimate by more than
  /// a tenth of its disagreement with the analytic value, the coordinate
  /// straddles a kink (relu, max, clamp, cell edge) and is counted in
  /// `nonsmooth` instead of the error.
  double tolerance = 1e-4;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;     // coordinates compared
  std::size_t nonsmooth = 0;  // coordinates skipped as kink straddles
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t worst_tensor = 0;  // index into `wrt`
  std::size_t worst_coord = 0;
};

/// Compares reverse-mode gradients of `f` with central differences over the
/// tensors in `wrt`. `f` must read `wrt` afresh on every call. Non-scalar
/// outputs are reduced with a fixed random weighting so every output element
/// contributes.
GradCheckResult check_gradient(const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                               const GradCheckOptions& options = {});

/// Every differentiable operation over `trials` random instances each; one
/// result per operation holding the worst trial.
std::vector<GradCheckResult> run_op_gradchecks(std::uint64_t seed, std::size_t trials = 10);

/// Micro detector (S=16, d=8, M=2, N=2, one decoder layer). The set loss is
/// evaluated with the matching found at the unperturbed point. Reference box
/// logits are only checked for the baseline variant: the aligner samples at
/// the boxes' current location without differentiating through it.
GradCheckResult run_end_to_end_gradcheck(Variant variant, std::uint64_t seed, std::size_t max_coords_per_tensor = 0);

ModelConfig micro_model_config(Variant variant);

}  // namespace samdetr
