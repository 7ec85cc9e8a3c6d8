// SPDX-License-Identifier: Apache-2.0
#include "msm/rope.hpp"

#include <cmath>
#include <string>

#include <json.hpp>

namespace msm {

FreqVec freq_vector(std::size_t pairs, double base) {
  if (pairs == 0) throw ValidationError("freq_vector: pair count must be >= 1");
  if (!std::isfinite(base) || !(base > 1.0)) throw ValidationError("freq_vector: base must be > 1");
  FreqVec f;
  f.base = base;
  f.values.resize(pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    f.values[p] = std::pow(base, -static_cast<double>(p) / static_cast<double>(pairs));
  }
  return f;
}

RopeConfig RopeConfig::for_head_dim(std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ValidationError("head dimension must be a positive even number, got " +
                          std::to_string(head_dim));
  }
  const std::size_t pairs = head_dim / 2;
  RopeConfig c;
  c.height_pairs = pairs / 4;
  c.width_pairs = pairs / 4;
  c.temporal_pairs = pairs - c.height_pairs - c.width_pairs;
  c.base = base;
  return c;
}

void validate_rope_config(const RopeConfig& config) {
  if (config.pairs() == 0) throw ValidationError("rope config allocates no rotation pairs");
  if (!std::isfinite(config.base) || !(config.base > 1.0)) {
    throw ValidationError("rope base must be > 1");
  }
}

namespace {

// Frequencies per axis, empty when the axis has no pairs.
struct AxisFreqs {
  std::vector<double> t, h, w;
};

AxisFreqs axis_freqs(const RopeConfig& config) {
  validate_rope_config(config);
  AxisFreqs f;
  if (config.temporal_pairs) f.t = freq_vector(config.temporal_pairs, config.base).values;
  if (config.height_pairs) f.h = freq_vector(config.height_pairs, config.base).values;
  if (config.width_pairs) f.w = freq_vector(config.width_pairs, config.base).values;
  return f;
}

void fill_row(const AxisFreqs& f, double t_phase, double h, double w, std::span<double> out) {
  std::size_t c = 0;
  for (double v : f.t) out[c++] = t_phase * v;
  for (double v : f.h) out[c++] = h * v;
  for (double v : f.w) out[c++] = w * v;
}

}  // namespace

void fill_angles(const RopeConfig& config, double t_phase, double h, double w,
                 std::span<double> out) {
  if (out.size() != config.pairs()) throw ShapeError("fill_angles: output span has wrong length");
  fill_row(axis_freqs(config), t_phase, h, w, out);
}

RopeTable video_rope_angles(const TokenLayout& layout, const ShotPlan& plan,
                            const RopeConfig& config) {
  const AxisFreqs f = axis_freqs(config);
  if (layout.video_tokens != plan.video_tokens() || layout.grid != plan.grid) {
    throw ShapeError("video_rope_angles: layout was not built from this plan");
  }
  RopeTable table{config, Tensor<double>({layout.video_tokens, config.pairs()})};
  const std::size_t cells = plan.grid.cells();
  for (std::size_t token = 0; token < layout.video_tokens; ++token) {
    const std::size_t frame = token / cells;
    const std::size_t cell = token % cells;
    const std::size_t shot = layout.frame_shot[frame];
    const double t_phase =
        static_cast<double>(frame) + static_cast<double>(shot) * plan.phase_shift;
    fill_row(f, t_phase, static_cast<double>(cell / plan.grid.width),
             static_cast<double>(cell % plan.grid.width), table.angles.row(token));
  }
  return table;
}

RopeTable reference_rope_angles(const CopyDescriptor& copy, const ShotPlan& plan,
                                const RopeConfig& config) {
  const AxisFreqs f = axis_freqs(config);
  if (copy.box.frame >= plan.total_frames() || shot_of_frame(plan, copy.box.frame) != copy.shot) {
    throw ShapeError("reference_rope_angles: copy does not belong to this plan");
  }
  const Grid g = copy.grid;
  RopeTable table{config, Tensor<double>({g.cells(), config.pairs()})};
  const double t_phase =
      static_cast<double>(copy.box.frame) + static_cast<double>(copy.shot) * plan.phase_shift;
  const double h_step = (copy.box.y2 - copy.box.y1) / static_cast<double>(g.height);
  const double w_step = (copy.box.x2 - copy.box.x1) / static_cast<double>(g.width);
  for (std::size_t j = 0; j < g.height; ++j) {
    for (std::size_t k = 0; k < g.width; ++k) {
      fill_row(f, t_phase, copy.box.y1 + h_step * static_cast<double>(j),
               copy.box.x1 + w_step * static_cast<double>(k), table.angles.row(j * g.width + k));
    }
  }
  return table;
}

RopeTable layout_rope_angles(const TokenLayout& layout, const ShotPlan& plan,
                             const RopeConfig& config) {
  RopeTable video = video_rope_angles(layout, plan, config);
  RopeTable table{config, Tensor<double>({layout.total, config.pairs()})};
  auto dst = table.angles.data();
  std::copy(video.angles.data().begin(), video.angles.data().end(), dst.begin());
  for (const auto& copy : layout.copies) {
    RopeTable part = reference_rope_angles(copy, plan, config);
    std::copy(part.angles.data().begin(), part.angles.data().end(),
              dst.begin() + static_cast<long>(copy.tokens.begin * config.pairs()));
  }
  return table;
}

std::string rope_descriptor_json(const RopeConfig& config, double phase_shift) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["P_t"] = config.temporal_pairs;
  j["P_h"] = config.height_pairs;
  j["P_w"] = config.width_pairs;
  j["base"] = config.base;
  j["phase_shift"] = phase_shift;
  j["channel_order"] = {"t", "h", "w"};
  return j.dump(2) + "\n";
}

}  // namespace msm
