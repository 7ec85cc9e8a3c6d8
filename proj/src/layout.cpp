// SPDX-License-Identifier: Apache-2.0
#include "msm/layout.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include <json.hpp>

namespace msm {

const char* to_string(RefKind kind) {
  return kind == RefKind::subject ? "subject" : "background";
}

std::size_t ShotPlan::total_frames() const noexcept {
  return std::accumulate(shot_frames.begin(), shot_frames.end(), std::size_t{0});
}

std::size_t ShotPlan::first_frame(std::size_t shot) const {
  if (shot >= shot_frames.size()) throw ValidationError("shot " + std::to_string(shot) + " out of range");
  return std::accumulate(shot_frames.begin(), shot_frames.begin() + static_cast<long>(shot),
                         std::size_t{0});
}

std::size_t TokenLayout::ref_tokens() const noexcept {
  std::size_t n = 0;
  for (const auto& g : ref_grids) n += g.cells();
  return n;
}

void validate_plan(const ShotPlan& plan) {
  if (plan.shot_frames.empty()) throw ValidationError("shot plan has no shots");
  for (std::size_t i = 0; i < plan.shot_frames.size(); ++i) {
    if (plan.shot_frames[i] == 0) {
      throw ValidationError("shots[" + std::to_string(i) + "].frames must be >= 1");
    }
  }
  if (plan.grid.height == 0 || plan.grid.width == 0) {
    throw ValidationError("grid H and W must be >= 1");
  }
  if (!std::isfinite(plan.phase_shift) || plan.phase_shift < 0) {
    throw ValidationError("phase_shift must be a finite value >= 0");
  }
}

std::size_t shot_of_frame(const ShotPlan& plan, std::size_t t) {
  std::size_t begin = 0;
  for (std::size_t i = 0; i < plan.shot_frames.size(); ++i) {
    const std::size_t end = begin + plan.shot_frames[i];
    if (t < end) return i;
    begin = end;
  }
  throw ValidationError("frame " + std::to_string(t) + " outside plan of " +
                        std::to_string(begin) + " frames");
}

namespace {

std::string box_label(std::size_t ref, std::size_t b) {
  return "refs[" + std::to_string(ref) + "].boxes[" + std::to_string(b) + "]";
}

void validate_box(const ShotPlan& plan, const Box& box, std::size_t ref, std::size_t b) {
  const std::string where = box_label(ref, b);
  if (box.ref_id != ref) {
    throw ValidationError(where + ": ref_id " + std::to_string(box.ref_id) +
                          " does not match reference index " + std::to_string(ref));
  }
  if (box.frame >= plan.total_frames()) {
    throw ValidationError(where + ": frame " + std::to_string(box.frame) + " outside plan of " +
                          std::to_string(plan.total_frames()) + " frames");
  }
  const double w = static_cast<double>(plan.grid.width);
  const double h = static_cast<double>(plan.grid.height);
  const bool finite = std::isfinite(box.x1) && std::isfinite(box.y1) && std::isfinite(box.x2) &&
                      std::isfinite(box.y2);
  if (!finite || !(box.x1 < box.x2) || !(box.y1 < box.y2)) {
    throw ValidationError(where + ": degenerate box");
  }
  if (box.x1 < 0 || box.y1 < 0 || box.x2 > w || box.y2 > h) {
    throw ValidationError(where + ": box outside the " + std::to_string(plan.grid.height) + "x" +
                          std::to_string(plan.grid.width) + " grid");
  }
}

void validate_reference(const ShotPlan& plan, const ReferenceSpec& ref, std::size_t m) {
  const std::string where = "refs[" + std::to_string(m) + "]";
  if (ref.grid.height == 0 || ref.grid.width == 0) {
    throw ValidationError(where + ": grid H and W must be >= 1");
  }
  if (ref.boxes.empty()) throw ValidationError(where + ": reference has no boxes");
  for (std::size_t b = 0; b < ref.boxes.size(); ++b) validate_box(plan, ref.boxes[b], m, b);
  if (ref.kind != RefKind::background) return;

  std::set<std::size_t> covered;
  for (std::size_t b = 0; b < ref.boxes.size(); ++b) {
    const Box& box = ref.boxes[b];
    const std::size_t shot = shot_of_frame(plan, box.frame);
    if (box.frame != plan.first_frame(shot)) {
      throw ValidationError(box_label(m, b) + ": background box must sit on the first frame of shot " +
                            std::to_string(shot));
    }
    if (box.x1 != 0 || box.y1 != 0 || box.x2 != static_cast<double>(plan.grid.width) ||
        box.y2 != static_cast<double>(plan.grid.height)) {
      throw ValidationError(box_label(m, b) + ": background box must be full-frame (0,0,W,H)");
    }
    if (!covered.insert(shot).second) {
      throw ValidationError(box_label(m, b) + ": background already has a box for shot " +
                            std::to_string(shot));
    }
  }
}

}  // namespace

TokenLayout build_token_layout(const ShotPlan& plan, std::span<const ReferenceSpec> refs) {
  validate_plan(plan);
  for (std::size_t m = 0; m < refs.size(); ++m) validate_reference(plan, refs[m], m);

  TokenLayout layout;
  layout.grid = plan.grid;
  const std::size_t cells = plan.grid.cells();
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < plan.shot_count(); ++i) {
    const std::size_t n = plan.shot_frames[i] * cells;
    layout.shot_video.push_back({cursor, cursor + n});
    for (std::size_t f = 0; f < plan.shot_frames[i]; ++f) layout.frame_shot.push_back(i);
    layout.token_shot.insert(layout.token_shot.end(), n, i);
    cursor += n;
  }
  layout.video_tokens = cursor;
  layout.token_role.assign(cursor, TokenRole::video);
  layout.token_copy.assign(cursor, TokenLayout::npos);

  for (std::size_t m = 0; m < refs.size(); ++m) {
    layout.ref_grids.push_back(refs[m].grid);
    layout.ref_copies.emplace_back();
    const std::size_t n = refs[m].grid.cells();
    for (std::size_t b = 0; b < refs[m].boxes.size(); ++b) {
      CopyDescriptor copy;
      copy.ref_id = m;
      copy.box_index = b;
      copy.box = refs[m].boxes[b];
      copy.shot = layout.frame_shot[copy.box.frame];
      copy.grid = refs[m].grid;
      copy.tokens = {cursor, cursor + n};
      layout.ref_copies.back().push_back(layout.copies.size());
      layout.token_shot.insert(layout.token_shot.end(), n, copy.shot);
      layout.token_role.insert(layout.token_role.end(), n, TokenRole::reference_copy);
      layout.token_copy.insert(layout.token_copy.end(), n, layout.copies.size());
      layout.copies.push_back(copy);
      cursor += n;
    }
  }
  layout.total = cursor;
  return layout;
}

std::string TokenLayout::to_json() const {
  using nlohmann::ordered_json;
  ordered_json j;
  j["version"] = 1;
  j["grid"] = {{"H", grid.height}, {"W", grid.width}};
  j["total"] = total;
  j["video_tokens"] = video_tokens;
  ordered_json shots = ordered_json::array();
  for (std::size_t i = 0; i < shot_video.size(); ++i) {
    shots.push_back({{"shot", i}, {"video", {shot_video[i].begin, shot_video[i].end}}});
  }
  j["shots"] = shots;
  ordered_json refs = ordered_json::array();
  for (std::size_t m = 0; m < ref_grids.size(); ++m) {
    refs.push_back({{"ref_id", m},
                    {"grid", {{"H", ref_grids[m].height}, {"W", ref_grids[m].width}}},
                    {"copies", ref_copies[m]}});
  }
  j["refs"] = refs;
  ordered_json copy_list = ordered_json::array();
  for (const auto& c : copies) {
    copy_list.push_back({{"ref_id", c.ref_id},
                         {"box_index", c.box_index},
                         {"box", {c.box.ref_id, c.box.frame, c.box.x1, c.box.y1, c.box.x2, c.box.y2}},
                         {"shot", c.shot},
                         {"tokens", {c.tokens.begin, c.tokens.end}}});
  }
  j["copies"] = copy_list;
  j["token_shot"] = token_shot;
  return j.dump(2) + "\n";
}

ReplicatedText replicate_text_embeddings(std::span<const Tensor<double>> per_shot_text,
                                         const ShotPlan& plan) {
  validate_plan(plan);
  if (per_shot_text.size() != plan.shot_count()) {
    throw ValidationError("replicate_text_embeddings: " + std::to_string(per_shot_text.size()) +
                          " texts for " + std::to_string(plan.shot_count()) + " shots");
  }
  std::size_t max_len = 0;
  const std::size_t dim = per_shot_text.front().rank() == 2 ? per_shot_text.front().cols() : 0;
  for (const auto& t : per_shot_text) {
    if (t.rank() != 2 || t.cols() != dim) {
      throw ShapeError("replicate_text_embeddings: every text must be [L x D] with a shared D");
    }
    max_len = std::max(max_len, t.rows());
  }
  const std::size_t frames = plan.total_frames();
  ReplicatedText out{Tensor<double>({frames, max_len, dim}), BoolMask(frames, max_len)};
  std::size_t frame = 0;
  for (std::size_t i = 0; i < plan.shot_count(); ++i) {
    const auto& text = per_shot_text[i];
    for (std::size_t f = 0; f < plan.shot_frames[i]; ++f, ++frame) {
      std::copy(text.data().begin(), text.data().end(),
                out.embeddings.data().begin() + static_cast<long>(frame * max_len * dim));
      for (std::size_t l = 0; l < text.rows(); ++l) out.valid.set(frame, l, true);
    }
  }
  return out;
}

}  // namespace msm
