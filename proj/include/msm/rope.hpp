// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "msm/layout.hpp"
#include "msm/tensor.hpp"

namespace msm {

inline constexpr double kDefaultRopeBase = 10000.0;

// Per-axis rotation frequencies f[p] = base^(-p/P): f[0] = 1, strictly
// decreasing, all in (0, 1].
struct FreqVec {
  double base = kDefaultRopeBase;
  std::vector<double> values;

  std::size_t pairs() const noexcept { return values.size(); }
};

FreqVec freq_vector(std::size_t pairs, double base = kDefaultRopeBase);

// Rotation-pair allocation across the (t, h, w) axes of one attention head.
struct RopeConfig {
  std::size_t temporal_pairs = 0;
  std::size_t height_pairs = 0;
  std::size_t width_pairs = 0;
  double base = kDefaultRopeBase;

  std::size_t pairs() const noexcept { return temporal_pairs + height_pairs + width_pairs; }
  std::size_t head_dim() const noexcept { return 2 * pairs(); }

  // Splits head_dim / 2 pairs t:h:w = 2:1:1, with h = w = floor(P / 4) and
  // the remainder on the temporal axis.
  static RopeConfig for_head_dim(std::size_t head_dim, double base = kDefaultRopeBase);
};

void validate_rope_config(const RopeConfig& config);

// Angles per token, channel-pair order (t..., h..., w...). Shape [tokens x P].
struct RopeTable {
  RopeConfig config;
  Tensor<double> angles;

  std::size_t tokens() const { return angles.rows(); }
};

// Angle row for a token at fractional position (t_phase, h, w), where
// t_phase already includes the shot phase term.
void fill_angles(const RopeConfig& config, double t_phase, double h, double w,
                 std::span<double> out);

// Narrative angles for all video tokens of `layout`: a token at global
// frame t of shot i and spatial cell (h, w) rotates by
// ((t + i * phi) f_t, h f_h, w f_w).
RopeTable video_rope_angles(const TokenLayout& layout, const ShotPlan& plan,
                            const RopeConfig& config);

// Box-sampled angles for one reference copy. Copy token (j, k) on the
// reference grid H_ref x W_ref sits at
// (t + shot * phi, y1 + (y2 - y1) / H_ref * j, x1 + (x2 - x1) / W_ref * k).
RopeTable reference_rope_angles(const CopyDescriptor& copy, const ShotPlan& plan,
                                const RopeConfig& config);

// Video table followed by every copy table, in layout token order.
RopeTable layout_rope_angles(const TokenLayout& layout, const ShotPlan& plan,
                             const RopeConfig& config);

// Sidecar descriptor {P_t, P_h, P_w, base, phase_shift} as JSON text.
std::string rope_descriptor_json(const RopeConfig& config, double phase_shift);

}  // namespace msm
