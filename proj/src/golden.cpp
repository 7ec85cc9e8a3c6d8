// SPDX-License-Identifier: Apache-2.0
#include "msm/golden.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msm/io.hpp"
#include "msm/numerics.hpp"

namespace msm::golden {

namespace fs = std::filesystem;

Inputs synthetic_inputs(const Scenario& scenario, const TokenLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = scenario.attention.d_model;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  Inputs in;
  in.weights.heads = scenario.attention.heads;
  in.weights.wq = rng.normal_tensor({d, d}, sd);
  in.weights.wk = rng.normal_tensor({d, d}, sd);
  in.weights.wv = rng.normal_tensor({d, d}, sd);
  in.weights.wo = rng.normal_tensor({d, d}, sd);
  in.ctx.video = rng.normal_tensor({layout.video_tokens, d});
  for (const Grid& g : layout.ref_grids) in.ctx.refs.push_back(rng.normal_tensor({g.cells(), d}));
  return in;
}

std::vector<Case> builtin_cases() {
  std::vector<Case> cases;
  {
    Scenario s;
    s.plan.shot_frames = {1};
    s.plan.grid = {1, 1};
    s.attention.d_model = 8;
    s.attention.heads = 1;
    s.attention.rope = RopeConfig::for_head_dim(8);
    cases.push_back({"single_token", s, 0});
  }
  {
    Scenario s;
    s.plan.shot_frames = {2, 1};
    s.plan.grid = {1, 2};
    s.refs.push_back({RefKind::subject, {1, 1}, {{0, 0, 0.0, 0.0, 1.0, 1.0}, {0, 2, 1.0, 0.0, 2.0, 1.0}}});
    s.refs.push_back({RefKind::background, {1, 2}, {{1, 2, 0.0, 0.0, 2.0, 1.0}}});
    s.attention.d_model = 16;
    s.attention.heads = 2;
    s.attention.rope = RopeConfig::for_head_dim(8);
    cases.push_back({"subject_background", s, 7});
  }
  {
    Scenario s;
    s.plan.shot_frames = {1, 2, 1};
    s.plan.grid = {2, 2};
    s.refs.push_back({RefKind::subject,
                      {2, 2},
                      {{0, 0, 0.0, 0.0, 1.0, 1.5}, {0, 1, 0.5, 0.5, 2.0, 2.0}, {0, 3, 1.0, 0.0, 2.0, 1.0}}});
    s.refs.push_back({RefKind::background, {1, 2}, {{1, 0, 0.0, 0.0, 2.0, 2.0}, {1, 3, 0.0, 0.0, 2.0, 2.0}}});
    s.attention.d_model = 24;
    s.attention.heads = 2;
    s.attention.rope = RopeConfig::for_head_dim(12);
    cases.push_back({"three_shot_mixed", s, 42});
  }
  return cases;
}

namespace {

TensorD run_case(const Scenario& s, const TokenLayout& layout, const Inputs& in) {
  const auto result =
      temporal_attention_forward(in.ctx, layout, s.plan, in.weights, s.attention.rope);
  return result.output.stacked();
}

}  // namespace

void write_vectors(const fs::path& root) {
  for (const Case& c : builtin_cases()) {
    const fs::path dir = root / kVersionDir / c.name;
    fs::create_directories(dir);
    const TokenLayout layout = build_token_layout(c.scenario.plan, c.scenario.refs);
    const Inputs in = synthetic_inputs(c.scenario, layout, c.seed);
    io::write_text(dir / "config.json", scenario_to_json(c.scenario));
    io::write_msmt(dir / "video.msmt", in.ctx.video);
    for (std::size_t m = 0; m < in.ctx.refs.size(); ++m) {
      io::write_msmt(dir / ("ref" + std::to_string(m) + ".msmt"), in.ctx.refs[m]);
    }
    io::write_msmt(dir / "wq.msmt", in.weights.wq);
    io::write_msmt(dir / "wk.msmt", in.weights.wk);
    io::write_msmt(dir / "wv.msmt", in.weights.wv);
    io::write_msmt(dir / "wo.msmt", in.weights.wo);
    io::write_msmt(dir / "output.msmt", run_case(c.scenario, layout, in));
  }
}

std::vector<Verdict> verify_vectors(const fs::path& root) {
  std::vector<Verdict> verdicts;
  const fs::path base = root / kVersionDir;
  if (!fs::is_directory(base)) {
    verdicts.push_back({base.string(), false, "golden directory not found"});
    return verdicts;
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) verdicts.push_back({base.string(), false, "no golden vectors"});
  for (const fs::path& dir : dirs) {
    Verdict v{dir.filename().string(), false, ""};
    try {
      const Scenario s = load_scenario(dir / "config.json");
      const TokenLayout layout = build_token_layout(s.plan, s.refs);
      Inputs in;
      in.weights.heads = s.attention.heads;
      in.weights.wq = io::read_msmt_as_double(dir / "wq.msmt");
      in.weights.wk = io::read_msmt_as_double(dir / "wk.msmt");
      in.weights.wv = io::read_msmt_as_double(dir / "wv.msmt");
      in.weights.wo = io::read_msmt_as_double(dir / "wo.msmt");
      in.ctx.video = io::read_msmt_as_double(dir / "video.msmt");
      for (std::size_t m = 0; m < layout.ref_count(); ++m) {
        in.ctx.refs.push_back(io::read_msmt_as_double(dir / ("ref" + std::to_string(m) + ".msmt")));
      }
      const TensorD expected = io::read_msmt_as_double(dir / "output.msmt");
      const TensorD actual = run_case(s, layout, in);
      if (expected.shape() != actual.shape()) {
        v.detail = "output shape " + shape_str(expected.shape()) + " vs computed " +
                   shape_str(actual.shape());
      } else {
        const double err = max_rel_diff(actual, expected);
        std::ostringstream os;
        os << "max rel diff " << err << " (tol " << kTolerance << ")";
        v.detail = os.str();
        v.passed = err <= kTolerance;
      }
    } catch (const std::exception& e) {
      v.detail = e.what();
    }
    verdicts.push_back(std::move(v));
  }
  return verdicts;
}

}  // namespace msm::golden
