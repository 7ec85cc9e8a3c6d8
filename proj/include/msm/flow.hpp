// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msm/layout.hpp"
#include "msm/tensor.hpp"

namespace msm {

inline constexpr std::size_t kDefaultSamplingSteps = 50;
inline constexpr double kDefaultGuidanceScale = 7.5;
inline constexpr double kSubjectLossWeight = 2.0;
inline constexpr double kBackgroundLossWeight = 1.0;

// Point on the straight path between clean latent z0 (tau = 0) and noise
// eps (tau = 1).
struct FlowSample {
  Tensor<double> z0;
  Tensor<double> eps;
  double tau = 0;
};

// (1 - tau) z0 + tau eps.
Tensor<double> interpolate(const FlowSample& s);

// eps - z0, the constant velocity of the straight path.
Tensor<double> velocity_target(const FlowSample& s);

// [N_video x channels] loss weights, token rows in layout order. Elements of
// tokens whose cell lies in any subject box on that frame get weight 2,
// everything else 1. Boxes are rounded outward to whole cells.
Tensor<double> subject_weight_map(const TokenLayout& layout, const ShotPlan& plan,
                                  std::span<const Box> subject_boxes, std::size_t channels = 1);

// Mean over elements of w * (target - pred)^2.
double weighted_velocity_loss(const Tensor<double>& pred, const Tensor<double>& target,
                              const Tensor<double>& weights);

// v_uncond + s (v_cond - v_uncond).
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, T guidance_scale);

using VelocityField = std::function<Tensor<double>(const Tensor<double>& z, double tau)>;

struct SamplerStep {
  std::size_t step = 0;
  double tau = 0;  // time after the step
  double norm = 0;  // Frobenius norm of z after the step
};

struct SamplerResult {
  Tensor<double> z;
  std::vector<SamplerStep> trace;  // entry 0 is the starting state

  std::string trace_csv() const;
};

// Explicit Euler on dz = v(z, tau) dtau from tau = 1 (z_start is noise) to
// tau = 0 over a uniform grid of `steps` steps.
SamplerResult euler_sample(const VelocityField& velocity, const Tensor<double>& z_start,
                           std::size_t steps = kDefaultSamplingSteps);

}  // namespace msm
