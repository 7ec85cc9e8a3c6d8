// SPDX-License-Identifier: Apache-2.0
#include "msm/mask.hpp"

#include <algorithm>
#include <string>

#include <json.hpp>

namespace msm {

bool mask_rule(const TokenLayout& layout, std::size_t q, std::size_t k) {
  if (q >= layout.total || k >= layout.total) {
    throw ValidationError("mask_rule: token index out of range (total " +
                          std::to_string(layout.total) + ")");
  }
  const bool q_video = layout.token_role[q] == TokenRole::video;
  const bool k_video = layout.token_role[k] == TokenRole::video;
  if (q_video && k_video) return true;
  return layout.token_shot[q] == layout.token_shot[k];
}

BoolMask build_mask(const TokenLayout& layout) {
  const MaskBlocks blocks = build_mask_blocks(layout);
  BoolMask mask(layout.total, layout.total);
  for (std::size_t q = 0; q < layout.total; ++q) {
    for (const Range& r : visible_keys(blocks, layout, q)) {
      for (std::size_t k = r.begin; k < r.end; ++k) mask.set(q, k, true);
    }
  }
  return mask;
}

MaskBlocks build_mask_blocks(const TokenLayout& layout) {
  MaskBlocks blocks;
  blocks.total = layout.total;
  blocks.all_video = {0, layout.video_tokens};
  blocks.shots.resize(layout.shot_count());
  for (std::size_t i = 0; i < layout.shot_count(); ++i) blocks.shots[i].video = layout.shot_video[i];
  for (const auto& copy : layout.copies) {
    auto& ranges = blocks.shots[copy.shot].copies;
    // Merge adjacent copies of the same shot into one run.
    if (!ranges.empty() && ranges.back().end == copy.tokens.begin) {
      ranges.back().end = copy.tokens.end;
    } else {
      ranges.push_back(copy.tokens);
    }
  }
  return blocks;
}

std::vector<Range> visible_keys(const MaskBlocks& blocks, const TokenLayout& layout,
                                std::size_t q) {
  if (q >= layout.total) throw ValidationError("visible_keys: token index out of range");
  const auto& shot = blocks.shots[layout.token_shot[q]];
  std::vector<Range> out;
  out.push_back(layout.token_role[q] == TokenRole::video ? blocks.all_video : shot.video);
  out.insert(out.end(), shot.copies.begin(), shot.copies.end());
  return out;
}

std::string MaskBlocks::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["total"] = total;
  j["video"] = {all_video.begin, all_video.end};
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < shots.size(); ++i) {
    nlohmann::ordered_json copies = nlohmann::ordered_json::array();
    for (const auto& r : shots[i].copies) copies.push_back({r.begin, r.end});
    list.push_back({{"shot", i}, {"video", {shots[i].video.begin, shots[i].video.end}},
                    {"copies", copies}});
  }
  j["shots"] = list;
  return j.dump(2) + "\n";
}

}  // namespace msm
