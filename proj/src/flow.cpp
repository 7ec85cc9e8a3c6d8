// SPDX-License-Identifier: Apache-2.0
#include "msm/flow.hpp"

#include <cmath>
#include <sstream>

#include "msm/numerics.hpp"

namespace msm {

namespace {

void check_sample(const FlowSample& s) {
  require_same_shape(s.z0.shape(), s.eps.shape(), "flow sample");
  if (!(s.tau >= 0.0 && s.tau <= 1.0)) throw ValidationError("tau must lie in [0, 1]");
}

}  // namespace

Tensor<double> interpolate(const FlowSample& s) {
  check_sample(s);
  Tensor<double> out(s.z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - s.tau) * s.z0[i] + s.tau * s.eps[i];
  return out;
}

Tensor<double> velocity_target(const FlowSample& s) {
  check_sample(s);
  return sub(s.eps, s.z0);
}

Tensor<double> subject_weight_map(const TokenLayout& layout, const ShotPlan& plan,
                                  std::span<const Box> subject_boxes, std::size_t channels) {
  validate_plan(plan);
  if (channels == 0) throw ValidationError("subject_weight_map: channels must be >= 1");
  if (layout.video_tokens != plan.video_tokens()) {
    throw ShapeError("subject_weight_map: layout was not built from this plan");
  }
  const std::size_t h_cells = plan.grid.height;
  const std::size_t w_cells = plan.grid.width;
  std::vector<std::uint8_t> inside(layout.video_tokens, 0);
  for (std::size_t b = 0; b < subject_boxes.size(); ++b) {
    const Box& box = subject_boxes[b];
    const bool ok = box.frame < plan.total_frames() && std::isfinite(box.x1) &&
                    std::isfinite(box.x2) && std::isfinite(box.y1) && std::isfinite(box.y2) &&
                    box.x1 >= 0 && box.y1 >= 0 && box.x1 < box.x2 && box.y1 < box.y2 &&
                    box.x2 <= static_cast<double>(w_cells) && box.y2 <= static_cast<double>(h_cells);
    if (!ok) throw ValidationError("subject_weight_map: box " + std::to_string(b) + " is invalid");
    const auto r0 = static_cast<std::size_t>(std::floor(box.y1));
    const auto r1 = static_cast<std::size_t>(std::ceil(box.y2));
    const auto c0 = static_cast<std::size_t>(std::floor(box.x1));
    const auto c1 = static_cast<std::size_t>(std::ceil(box.x2));
    const std::size_t base = box.frame * plan.grid.cells();
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) inside[base + r * w_cells + c] = 1;
    }
  }
  Tensor<double> w({layout.video_tokens, channels});
  for (std::size_t t = 0; t < layout.video_tokens; ++t) {
    const double v = inside[t] ? kSubjectLossWeight : kBackgroundLossWeight;
    for (std::size_t c = 0; c < channels; ++c) w.at(t, c) = v;
  }
  return w;
}

double weighted_velocity_loss(const Tensor<double>& pred, const Tensor<double>& target,
                              const Tensor<double>& weights) {
  require_same_shape(pred.shape(), target.shape(), "weighted_velocity_loss pred/target");
  require_same_shape(pred.shape(), weights.shape(), "weighted_velocity_loss weights");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = target[i] - pred[i];
    acc += weights[i] * r * r;
  }
  return acc / static_cast<double>(pred.size());
}

template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& v_cond, const Tensor<T>& v_uncond, T guidance_scale) {
  require_same_shape(v_cond.shape(), v_uncond.shape(), "cfg_combine");
  Tensor<T> out(v_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = v_uncond[i] + guidance_scale * (v_cond[i] - v_uncond[i]);
  }
  return out;
}

template Tensor<float> cfg_combine(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> cfg_combine(const Tensor<double>&, const Tensor<double>&, double);

SamplerResult euler_sample(const VelocityField& velocity, const Tensor<double>& z_start,
                           std::size_t steps) {
  if (steps == 0) throw ValidationError("euler_sample: steps must be >= 1");
  SamplerResult result;
  result.z = z_start;
  result.trace.push_back({0, 1.0, frobenius_norm(result.z)});
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const double tau = 1.0 - static_cast<double>(s) * dt;
    const Tensor<double> v = velocity(result.z, tau);
    require_same_shape(v.shape(), result.z.shape(), "euler_sample velocity");
    for (std::size_t i = 0; i < v.size(); ++i) result.z[i] -= dt * v[i];
    result.trace.push_back({s + 1, 1.0 - static_cast<double>(s + 1) * dt, frobenius_norm(result.z)});
  }
  return result;
}

std::string SamplerResult::trace_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,tau,norm\n";
  for (const auto& s : trace) os << s.step << ',' << s.tau << ',' << s.norm << '\n';
  return os.str();
}

}  // namespace msm
