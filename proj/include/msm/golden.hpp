// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msm/attention.hpp"
#include "msm/config.hpp"
#include "msm/rng.hpp"

namespace msm::golden {

// Directory layout: <root>/v1/<case>/{config.json, video.msmt, ref<m>.msmt,
// wq.msmt, wk.msmt, wv.msmt, wo.msmt, output.msmt}; output is the stacked
// [video; refs] result of the block-sparse forward pass in double precision.
inline constexpr const char* kVersionDir = "v1";
inline constexpr double kTolerance = 1e-10;

struct Inputs {
  InContext<double> ctx;
  AttnWeights<double> weights;
};

// Synthetic inputs: weights first (wq, wk, wv, wo), then video, then each
// reference block, all from one Rng(seed) with N(0, 1) latents and
// N(0, 1/d_model) weights.
Inputs synthetic_inputs(const Scenario& scenario, const TokenLayout& layout, std::uint64_t seed);

struct Case {
  std::string name;
  Scenario scenario;
  std::uint64_t seed = 0;
};

// Built-in cases covering one token, a subject plus background, and three shots.
std::vector<Case> builtin_cases();

void write_vectors(const std::filesystem::path& root);

struct Verdict {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Recomputes every case under root/v1 from its stored inputs and compares
// with the stored output. A missing or unreadable file fails its case.
std::vector<Verdict> verify_vectors(const std::filesystem::path& root);

}  // namespace msm::golden
