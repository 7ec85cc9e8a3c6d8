// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "msm/layout.hpp"
#include "msm/rope.hpp"

namespace msm {

inline constexpr int kConfigVersion = 1;

struct AttentionConfig {
  std::size_t d_model = 16;
  std::size_t heads = 2;
  RopeConfig rope = RopeConfig::for_head_dim(8);
};

// A parsed shot-plan document.
//
//   {
//     "version": 1,                        optional, must be 1
//     "shots": [{"frames": 2}, ...],       >= 1 shot, frames >= 1
//     "grid": {"H": 2, "W": 2},            latent token grid
//     "phase_shift": 0.5,                  optional, default 0.5
//     "refs": [                            optional
//       {"kind": "subject" | "background",
//        "grid": {"H": 1, "W": 1},
//        "boxes": [[m, t, x1, y1, x2, y2], ...]}
//     ],
//     "attention": {                       optional
//       "d_model": 16, "heads": 2,
//       "rope_base": 10000,                optional
//       "pairs": [P_t, P_h, P_w]           optional, default 2:1:1 split
//     }
//   }
struct Scenario {
  ShotPlan plan;
  std::vector<ReferenceSpec> refs;
  AttentionConfig attention;
};

// Parses and validates a document. Errors are ValidationError naming the
// offending field (or the line/column for malformed JSON).
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::filesystem::path& path);

// Canonical JSON rendering, parseable by parse_scenario.
std::string scenario_to_json(const Scenario& s);

}  // namespace msm
