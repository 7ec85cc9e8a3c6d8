// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msm/layout.hpp"
#include "msm/tensor.hpp"

namespace msm {

// Attention permission between two tokens of a layout:
//   video -> video                 always
//   video of shot i -> copy        iff the copy belongs to shot i
//   copy of shot i -> copy         iff both belong to shot i
//   copy of shot i -> video        iff the video token is in shot i
bool mask_rule(const TokenLayout& layout, std::size_t q, std::size_t k);

// Dense [total x total] mask with mask[q][k] = mask_rule(layout, q, k).
BoolMask build_mask(const TokenLayout& layout);

// Per-shot block descriptor of the same mask. Video tokens of every shot
// see all video tokens plus their own shot's copies; copies of shot i see
// shot i's video range plus shot i's copies.
struct MaskBlocks {
  struct Shot {
    Range video;
    std::vector<Range> copies;
  };
  std::size_t total = 0;
  Range all_video;
  std::vector<Shot> shots;

  std::string to_json() const;
};

MaskBlocks build_mask_blocks(const TokenLayout& layout);

// Key ranges visible to query token q, ascending and disjoint.
std::vector<Range> visible_keys(const MaskBlocks& blocks, const TokenLayout& layout,
                                std::size_t q);

}  // namespace msm
