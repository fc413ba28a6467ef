#pragma once

#include "mvox/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mvox {

struct GradCheckOptions {
  int probes = 20;
  double step = 0.0;       // 0 picks a precision-dependent default
  double tolerance = 0.0;  // 0 picks 1e-3 (f32) or 1e-6 (f64)
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  int probes = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

template <typename Scalar>
struct GradCheckCase {
  std::function<Tensor<Scalar>()> loss;
  std::vector<Tensor<Scalar>> inputs;
};

// Compares the reverse-mode directional derivative <grad L, v> against
// central differences of L along Gaussian directions v spanning every tensor
// in `inputs`, with one Richardson step (h and h/2) to cancel the h^2 term.
// The loss is re-evaluated from scratch for each perturbation, so the numeric
// side never touches a backward rule.
// Directions with |<grad L, v>| under a tenth of its typical size are
// redrawn (a bounded number of times), since relative error is undefined there.
template <typename Scalar>
GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<Scalar>()>& loss_fn,
                                std::vector<Tensor<Scalar>> inputs, GradCheckOptions options = {});

// Same, but the differences are taken on `reference`, an f64 copy of the
// target graph. Its inputs are overwritten with the target's values first, so
// both graphs evaluate the same function at the same point. Used for f32,
// where rounding of the loss itself swamps a pure single-precision quotient.
template <typename Scalar>
GradCheckResult check_gradients(const std::string& name, GradCheckCase<Scalar> target,
                                GradCheckCase<double> reference, GradCheckOptions options = {});

// Preset-level suite shared by the gradcheck CLI and the test binaries:
// every differentiable op plus full tiny generator and discriminator graphs
// in both precisions.
std::vector<GradCheckResult> run_gradient_suite(int probes = 20, std::uint64_t seed = 1);

}  // namespace mvox
