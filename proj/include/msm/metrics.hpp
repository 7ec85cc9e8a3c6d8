// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace msm::metrics {

struct DetBox {
  std::size_t ref_id = 0;
  std::size_t frame = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

void validate_box(const DetBox& b);

double iou(const DetBox& a, const DetBox& b);

struct GroundingTerm {
  std::size_t ref_id = 0;
  std::size_t frame = 0;
  double iou = 0;
  bool matched = false;
};

struct GroundingReport {
  double miou = 0;
  std::vector<GroundingTerm> terms;  // sorted by (ref_id, frame)
};

// Mean IoU over every ground-truth (ref_id, frame) at the keyframes; a
// ground-truth box without a prediction contributes 0. Empty `keyframes`
// selects every ground-truth frame.
GroundingReport grounding_report(std::span<const DetBox> pred, std::span<const DetBox> gt,
                                 std::span<const std::size_t> keyframes = {});

double grounding_miou(std::span<const DetBox> pred, std::span<const DetBox> gt,
                      std::span<const std::size_t> keyframes = {});

// Strictly increasing frame indices, each >= 1.
void validate_transitions(std::span<const std::size_t> frames, const char* what);

// Half the mean gt shot length, taking shots as the gt.size() segments that
// end at each gt transition.
double default_miss_cost(std::span<const std::size_t> gt);

struct TransitionMatch {
  double total_cost = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred index, gt index)
  std::size_t missed_gt = 0;
  std::size_t spurious_pred = 0;
};

// Minimum-cost order-preserving one-to-one matching: a matched pair costs
// |pred - gt|, every unmatched transition on either side costs miss_cost.
TransitionMatch match_transitions(std::span<const std::size_t> pred,
                                  std::span<const std::size_t> gt, double miss_cost);

// match_transitions(...).total_cost / |gt|. miss_cost defaults to
// default_miss_cost(gt).
double transition_deviation(std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                            std::optional<double> miss_cost = std::nullopt);

}  // namespace msm::metrics
