// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msm/tensor.hpp"

namespace msm {

// Default angular phase shift between consecutive shots.
inline constexpr double kDefaultPhaseShift = 0.5;

struct Grid {
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t cells() const noexcept { return height * width; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

// Ordered shots over a shared latent grid. Frame indices are global: shot i
// covers [first_frame(i), first_frame(i) + frames[i]).
struct ShotPlan {
  std::vector<std::size_t> shot_frames;
  Grid grid;
  double phase_shift = kDefaultPhaseShift;

  std::size_t shot_count() const noexcept { return shot_frames.size(); }
  std::size_t total_frames() const noexcept;
  std::size_t first_frame(std::size_t shot) const;
  std::size_t video_tokens() const noexcept { return total_frames() * grid.cells(); }
};

// Grounding box of reference `ref_id` on global latent frame `frame`, in
// token-grid coordinates (x along width, y along height).
struct Box {
  std::size_t ref_id = 0;
  std::size_t frame = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  friend bool operator==(const Box&, const Box&) = default;
};

enum class RefKind : std::uint8_t { subject, background };

const char* to_string(RefKind kind);

struct ReferenceSpec {
  RefKind kind = RefKind::subject;
  Grid grid;
  std::vector<Box> boxes;
};

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  friend bool operator==(const Range&, const Range&) = default;
};

enum class TokenRole : std::uint8_t { video, reference_copy };

// One expanded copy of a reference, bound to a single box.
struct CopyDescriptor {
  std::size_t ref_id = 0;
  std::size_t box_index = 0;  // position within the reference's box list
  Box box;
  std::size_t shot = 0;       // shot containing box.frame
  Grid grid;                  // reference token grid
  Range tokens;
};

// Token index space: video tokens (shot, frame, row-major spatial) followed
// by reference copies in (ref_id, box order).
struct TokenLayout {
  Grid grid;
  std::vector<Range> shot_video;          // video token range per shot
  std::vector<std::size_t> frame_shot;    // shot per global frame
  std::vector<CopyDescriptor> copies;
  std::vector<Grid> ref_grids;            // per reference
  std::vector<std::vector<std::size_t>> ref_copies;  // copy indices per reference
  std::vector<std::size_t> token_shot;
  std::vector<TokenRole> token_role;
  std::vector<std::size_t> token_copy;    // copy index for copy tokens, npos otherwise
  std::size_t video_tokens = 0;
  std::size_t total = 0;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t shot_count() const noexcept { return shot_video.size(); }
  std::size_t ref_count() const noexcept { return ref_grids.size(); }
  // Tokens of all reference blocks before copy expansion.
  std::size_t ref_tokens() const noexcept;
  bool is_video(std::size_t token) const { return token_role.at(token) == TokenRole::video; }

  // Canonical JSON serialization (stable key order, fixed number format).
  std::string to_json() const;
};

// Throws ValidationError on an empty plan, zero frames, or an empty grid.
void validate_plan(const ShotPlan& plan);

// Shot index whose global frame range contains t.
std::size_t shot_of_frame(const ShotPlan& plan, std::size_t t);

// Validates every reference against the plan and compiles the token layout.
// Reference m must be at position m of `refs`; every box carries ref_id m.
TokenLayout build_token_layout(const ShotPlan& plan, std::span<const ReferenceSpec> refs);

struct ReplicatedText {
  Tensor<double> embeddings;  // [frames x L_max x D]
  BoolMask valid;             // [frames x L_max]
};

// Pairs every frame of shot i with shot i's text embedding [L_i x D];
// shorter texts are zero-padded and marked invalid.
ReplicatedText replicate_text_embeddings(std::span<const Tensor<double>> per_shot_text,
                                         const ShotPlan& plan);

}  // namespace msm
