// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <exception>
#include <optional>
#include <ostream>
#include <string>

#include "msm/error.hpp"
#include "msm/flow.hpp"
#include "msm/tensor.hpp"

namespace msm::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitInvalidInput = 2;

enum class FieldKind { linear, constant };

struct RunConfig {
  std::optional<std::filesystem::path> config;
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
  std::size_t steps = kDefaultSamplingSteps;
  double cfg_scale = kDefaultGuidanceScale;
  Precision precision = Precision::f64;
  FieldKind field = FieldKind::linear;
  std::filesystem::path pred, gt;  // metrics inputs
  std::filesystem::path golden_dir;
  bool regen_golden = false;
};

// Each command writes its artifacts under cfg.out, prints a short summary to
// `log` and returns an exit code. ValidationError propagates to the caller.

// layout.json, rope.msmt, rope.json, mask.msmt, mask.pbm, mask_blocks.json
int cmd_compile(const RunConfig& cfg, std::ostream& log);

// forward.msmt, naive.msmt, report.json
int cmd_demo_forward(const RunConfig& cfg, std::ostream& log);

// trajectory.csv, sample_report.json
int cmd_sample(const RunConfig& cfg, std::ostream& log);

// metrics_report.json from JSONL detection files.
//   box record:        {"case": "a", "ref_id": 0, "frame": 3, "box": [x1, y1, x2, y2]}
//   transition record: {"case": "a", "frame": 12}
// "case" is optional (default "default"). Every gt case needs at least one
// transition; mIoU is null for a case without gt boxes.
int cmd_metrics(const RunConfig& cfg, std::ostream& log);

// Property table plus golden-vector verification.
int cmd_selftest(const RunConfig& cfg, std::ostream& log);

// Verifies the golden vectors, or rewrites them when cfg.regen_golden is set.
int cmd_golden(const RunConfig& cfg, std::ostream& log);

// Runs `fn`, mapping ValidationError to kExitInvalidInput and any other
// exception to kExitCheckFailed, with the message on `err`.
template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace msm::cli
