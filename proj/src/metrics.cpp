// SPDX-License-Identifier: Apache-2.0
#include "msm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "msm/error.hpp"

namespace msm::metrics {

void validate_box(const DetBox& b) {
  const bool finite =
      std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2);
  if (!finite || !(b.x1 < b.x2) || !(b.y1 < b.y2)) {
    throw ValidationError("degenerate box for ref " + std::to_string(b.ref_id) + " at frame " +
                          std::to_string(b.frame));
  }
}

double iou(const DetBox& a, const DetBox& b) {
  validate_box(a);
  validate_box(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (area_a + area_b - inter);
}

namespace {

using Key = std::pair<std::size_t, std::size_t>;

std::map<Key, DetBox> index_boxes(std::span<const DetBox> boxes, const char* what) {
  std::map<Key, DetBox> out;
  for (const auto& b : boxes) {
    validate_box(b);
    if (!out.emplace(Key{b.ref_id, b.frame}, b).second) {
      throw ValidationError(std::string(what) + ": duplicate box for ref " +
                            std::to_string(b.ref_id) + " at frame " + std::to_string(b.frame));
    }
  }
  return out;
}

}  // namespace

GroundingReport grounding_report(std::span<const DetBox> pred, std::span<const DetBox> gt,
                                 std::span<const std::size_t> keyframes) {
  const auto pred_index = index_boxes(pred, "predictions");
  const auto gt_index = index_boxes(gt, "ground truth");
  const std::set<std::size_t> frames(keyframes.begin(), keyframes.end());
  GroundingReport report;
  double sum = 0;
  for (const auto& [key, box] : gt_index) {
    if (!frames.empty() && !frames.count(key.second)) continue;
    GroundingTerm term{key.first, key.second, 0.0, false};
    if (auto it = pred_index.find(key); it != pred_index.end()) {
      term.iou = iou(it->second, box);
      term.matched = true;
    }
    sum += term.iou;
    report.terms.push_back(term);
  }
  if (report.terms.empty()) {
    throw ValidationError("grounding mIoU: no ground-truth boxes at the requested keyframes");
  }
  report.miou = sum / static_cast<double>(report.terms.size());
  return report;
}

double grounding_miou(std::span<const DetBox> pred, std::span<const DetBox> gt,
                      std::span<const std::size_t> keyframes) {
  return grounding_report(pred, gt, keyframes).miou;
}

void validate_transitions(std::span<const std::size_t> frames, const char* what) {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i] < 1) throw ValidationError(std::string(what) + ": transition frames must be >= 1");
    if (i && frames[i] <= frames[i - 1]) {
      throw ValidationError(std::string(what) + ": transitions must be strictly increasing");
    }
  }
}

double default_miss_cost(std::span<const std::size_t> gt) {
  if (gt.empty()) throw ValidationError("ground-truth transitions are empty");
  return 0.5 * static_cast<double>(gt.back()) / static_cast<double>(gt.size());
}

TransitionMatch match_transitions(std::span<const std::size_t> pred,
                                  std::span<const std::size_t> gt, double miss_cost) {
  validate_transitions(pred, "predicted");
  validate_transitions(gt, "ground truth");
  if (!std::isfinite(miss_cost) || miss_cost < 0) {
    throw ValidationError("miss cost must be a finite value >= 0");
  }
  const std::size_t n = pred.size(), m = gt.size();
  // cost[i][j]: best cost aligning pred[0, i) with gt[0, j).
  std::vector<std::vector<double>> cost(n + 1, std::vector<double>(m + 1, 0.0));
  for (std::size_t i = 1; i <= n; ++i) cost[i][0] = static_cast<double>(i) * miss_cost;
  for (std::size_t j = 1; j <= m; ++j) cost[0][j] = static_cast<double>(j) * miss_cost;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const double gap = std::abs(static_cast<double>(pred[i - 1]) - static_cast<double>(gt[j - 1]));
      cost[i][j] = std::min({cost[i - 1][j - 1] + gap, cost[i - 1][j] + miss_cost,
                             cost[i][j - 1] + miss_cost});
    }
  }
  TransitionMatch match;
  match.total_cost = cost[n][m];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double gap =
          std::abs(static_cast<double>(pred[i - 1]) - static_cast<double>(gt[j - 1]));
      if (cost[i][j] == cost[i - 1][j - 1] + gap) {
        match.pairs.emplace_back(i - 1, j - 1);
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && cost[i][j] == cost[i - 1][j] + miss_cost) {
      ++match.spurious_pred;
      --i;
    } else {
      ++match.missed_gt;
      --j;
    }
  }
  std::reverse(match.pairs.begin(), match.pairs.end());
  return match;
}

double transition_deviation(std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                            std::optional<double> miss_cost) {
  if (gt.empty()) throw ValidationError("transition deviation needs at least one ground-truth transition");
  const double miss = miss_cost ? *miss_cost : default_miss_cost(gt);
  return match_transitions(pred, gt, miss).total_cost / static_cast<double>(gt.size());
}

}  // namespace msm::metrics
