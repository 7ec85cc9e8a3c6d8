// SPDX-License-Identifier: Apache-2.0
#include "msm/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "msm/attention.hpp"
#include "msm/config.hpp"
#include "msm/golden.hpp"
#include "msm/io.hpp"
#include "msm/layout.hpp"
#include "msm/mask.hpp"
#include "msm/metrics.hpp"
#include "msm/numerics.hpp"
#include "msm/rng.hpp"
#include "msm/rope.hpp"
#include "msm/testing/properties.hpp"

namespace msm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

Scenario require_scenario(const RunConfig& cfg) {
  if (!cfg.config) throw ValidationError("--config is required for this command");
  return load_scenario(*cfg.config);
}

void prepare_out(const RunConfig& cfg) { fs::create_directories(cfg.out); }

std::string dump(const json& j) { return j.dump(2) + "\n"; }

template <typename T>
InContext<T> cast_context(const InContext<double>& c) {
  InContext<T> out{c.video.template cast<T>(), {}};
  for (const auto& r : c.refs) out.refs.push_back(r.template cast<T>());
  return out;
}

template <typename T>
AttnWeights<T> cast_weights(const AttnWeights<double>& w) {
  return {w.wq.template cast<T>(), w.wk.template cast<T>(), w.wv.template cast<T>(),
          w.wo.template cast<T>(), w.heads};
}

template <typename T>
int demo_forward_as(const RunConfig& cfg, const Scenario& s, const TokenLayout& layout,
                    std::ostream& log) {
  const golden::Inputs in = golden::synthetic_inputs(s, layout, cfg.seed);
  const InContext<T> ctx = cast_context<T>(in.ctx);
  const AttnWeights<T> w = cast_weights<T>(in.weights);
  const Tensor<T> fast =
      temporal_attention_forward(ctx, layout, s.plan, w, s.attention.rope).output.stacked();
  const Tensor<T> naive = temporal_attention_naive(ctx, layout, s.plan, w, s.attention.rope).stacked();

  io::write_msmt(cfg.out / "forward.msmt", fast);
  io::write_msmt(cfg.out / "naive.msmt", naive);

  const double diff = max_rel_diff(fast.template cast<double>(), naive.template cast<double>());
  const double tol = precision_of<T>() == Precision::f64 ? 1e-9 : 1e-4;
  json j;
  j["seed"] = cfg.seed;
  j["precision"] = precision_of<T>() == Precision::f64 ? "f64" : "f32";
  j["tokens"] = layout.total;
  j["video_tokens"] = layout.video_tokens;
  j["d_model"] = s.attention.d_model;
  j["heads"] = s.attention.heads;
  j["output_norm"] = frobenius_norm(fast.template cast<double>());
  j["naive_norm"] = frobenius_norm(naive.template cast<double>());
  j["max_rel_diff"] = diff;
  j["tolerance"] = tol;
  j["passed"] = diff <= tol;
  io::write_text(cfg.out / "report.json", dump(j));
  log << "forward vs naive: max rel diff " << diff << " (tol " << tol << ")\n";
  return diff <= tol ? kExitOk : kExitCheckFailed;
}

}  // namespace

int cmd_compile(const RunConfig& cfg, std::ostream& log) {
  const Scenario s = require_scenario(cfg);
  const TokenLayout layout = build_token_layout(s.plan, s.refs);
  prepare_out(cfg);
  io::write_text(cfg.out / "layout.json", layout.to_json());
  io::write_msmt(cfg.out / "rope.msmt", layout_rope_angles(layout, s.plan, s.attention.rope).angles);
  io::write_text(cfg.out / "rope.json", rope_descriptor_json(s.attention.rope, s.plan.phase_shift));
  const BoolMask mask = build_mask(layout);
  io::write_mask_msmt(cfg.out / "mask.msmt", mask);
  io::write_mask_pbm(cfg.out / "mask.pbm", mask);
  io::write_text(cfg.out / "mask_blocks.json", build_mask_blocks(layout).to_json());
  log << "compiled " << layout.total << " tokens (" << layout.video_tokens << " video, "
      << layout.copies.size() << " reference copies), phase shift " << s.plan.phase_shift
      << "\n";
  return kExitOk;
}

int cmd_demo_forward(const RunConfig& cfg, std::ostream& log) {
  const Scenario s = require_scenario(cfg);
  const TokenLayout layout = build_token_layout(s.plan, s.refs);
  prepare_out(cfg);
  if (cfg.precision == Precision::f32) return demo_forward_as<float>(cfg, s, layout, log);
  return demo_forward_as<double>(cfg, s, layout, log);
}

int cmd_sample(const RunConfig& cfg, std::ostream& log) {
  if (cfg.steps == 0) throw ValidationError("--steps must be >= 1");
  if (!std::isfinite(cfg.cfg_scale)) throw ValidationError("--cfg-scale must be finite");
  const Scenario s = require_scenario(cfg);
  prepare_out(cfg);
  Rng rng(cfg.seed);
  const TensorD z = rng.normal_tensor<double>({s.plan.video_tokens(), s.attention.d_model});
  const double scale_s = cfg.cfg_scale;

  VelocityField field;
  TensorD oracle;
  double tol = 0;
  if (cfg.field == FieldKind::linear) {
    // v_c = v_u = z, so guidance leaves z' = z and the flow ends at e^-1 z.
    field = [scale_s](const TensorD& x, double) { return cfg_combine(x, x, scale_s); };
    oracle = scale(z, std::exp(-1.0));
    tol = cfg.steps >= kDefaultSamplingSteps ? 0.015 : 1.0 / static_cast<double>(cfg.steps);
  } else {
    // v_c = 1, v_u = 0: guided velocity is the constant s.
    field = [scale_s](const TensorD& x, double) {
      return cfg_combine(TensorD::full(x.shape(), 1.0), TensorD(x.shape()), scale_s);
    };
    oracle = sub(z, TensorD::full(z.shape(), scale_s));
    tol = 1e-12;
  }
  const SamplerResult r = euler_sample(field, z, cfg.steps);
  io::write_text(cfg.out / "trajectory.csv", r.trace_csv());
  const double err = max_rel_diff(r.z, oracle);
  json j;
  j["field"] = cfg.field == FieldKind::linear ? "linear" : "constant";
  j["seed"] = cfg.seed;
  j["steps"] = cfg.steps;
  j["cfg_scale"] = cfg.cfg_scale;
  j["start_norm"] = frobenius_norm(z);
  j["final_norm"] = frobenius_norm(r.z);
  j["oracle_rel_err"] = err;
  j["tolerance"] = tol;
  j["passed"] = err <= tol;
  io::write_text(cfg.out / "sample_report.json", dump(j));
  log << j["field"].get<std::string>() << " field, " << cfg.steps << " steps: rel err " << err
      << " (tol " << tol << ")\n";
  return err <= tol ? kExitOk : kExitCheckFailed;
}

namespace {

struct CaseRecords {
  std::vector<metrics::DetBox> boxes;
  std::vector<std::size_t> transitions;
};

std::size_t index_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing \"" + key + "\"");
  const json& v = j[key];
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ValidationError(where + ": \"" + key + "\" must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::map<std::string, CaseRecords> read_records(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open " + path.string());
  std::map<std::string, CaseRecords> cases;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ValidationError(where + ": record must be a JSON object");
    std::string name = "default";
    for (const auto& [key, value] : j.items()) {
      if (key != "case" && key != "ref_id" && key != "frame" && key != "box") {
        throw ValidationError(where + ": unknown field \"" + key + "\"");
      }
    }
    if (j.contains("case")) {
      if (!j["case"].is_string()) throw ValidationError(where + ": \"case\" must be a string");
      name = j["case"].get<std::string>();
    }
    CaseRecords& rec = cases[name];
    const std::size_t frame = index_field(j, "frame", where);
    if (j.contains("box")) {
      const json& b = j["box"];
      if (!b.is_array() || b.size() != 4 ||
          !std::all_of(b.begin(), b.end(), [](const json& v) { return v.is_number(); })) {
        throw ValidationError(where + ": \"box\" must be [x1, y1, x2, y2]");
      }
      metrics::DetBox box{index_field(j, "ref_id", where), frame, b[0].get<double>(),
                          b[1].get<double>(),             b[2].get<double>(), b[3].get<double>()};
      try {
        metrics::validate_box(box);
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
      }
      rec.boxes.push_back(box);
    } else {
      if (j.contains("ref_id")) throw ValidationError(where + ": transition record has \"ref_id\"");
      rec.transitions.push_back(frame);
    }
  }
  return cases;
}

}  // namespace

int cmd_metrics(const RunConfig& cfg, std::ostream& log) {
  if (cfg.pred.empty() || cfg.gt.empty()) throw ValidationError("--pred and --gt are required");
  auto pred = read_records(cfg.pred);
  auto gt = read_records(cfg.gt);
  if (gt.empty()) throw ValidationError(cfg.gt.string() + ": no records");
  for (const auto& [name, rec] : pred) {
    if (!gt.count(name)) throw ValidationError("pred case \"" + name + "\" has no ground truth");
  }

  json per_case = json::array();
  double miou_sum = 0, dev_sum = 0;
  std::size_t miou_cases = 0;
  for (auto& [name, g] : gt) {
    CaseRecords& p = pred[name];
    std::sort(g.transitions.begin(), g.transitions.end());
    std::sort(p.transitions.begin(), p.transitions.end());
    if (g.transitions.empty()) {
      throw ValidationError("case \"" + name + "\": ground truth has no transitions");
    }
    const std::string gt_what = "case \"" + name + "\" gt transitions";
    const std::string pred_what = "case \"" + name + "\" pred transitions";
    metrics::validate_transitions(g.transitions, gt_what.c_str());
    metrics::validate_transitions(p.transitions, pred_what.c_str());
    const metrics::TransitionMatch match =
        metrics::match_transitions(p.transitions, g.transitions, metrics::default_miss_cost(g.transitions));
    const double dev = match.total_cost / static_cast<double>(g.transitions.size());
    json c;
    c["case"] = name;
    if (g.boxes.empty()) {
      c["miou"] = nullptr;
    } else {
      const double m = metrics::grounding_miou(p.boxes, g.boxes);
      c["miou"] = m;
      miou_sum += m;
      ++miou_cases;
    }
    c["gt_boxes"] = g.boxes.size();
    c["transition_deviation"] = dev;
    c["matched_transitions"] = match.pairs.size();
    c["missed_transitions"] = match.missed_gt;
    c["spurious_transitions"] = match.spurious_pred;
    per_case.push_back(c);
    dev_sum += dev;
  }
  json report;
  if (miou_cases) {
    report["miou"] = miou_sum / static_cast<double>(miou_cases);
  } else {
    report["miou"] = nullptr;
  }
  report["transition_deviation"] = dev_sum / static_cast<double>(gt.size());
  report["per_case"] = per_case;
  prepare_out(cfg);
  io::write_text(cfg.out / "metrics_report.json", dump(report));
  log << "miou " << report["miou"].dump() << ", transition_deviation "
      << report["transition_deviation"].dump() << " over " << gt.size() << " case(s)\n";
  return kExitOk;
}

int cmd_selftest(const RunConfig& cfg, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, testing::CheckResult>> rows;
  for (const auto& check : testing::property_checks()) {
    rows.emplace_back(check.module, testing::timed(check.name, check.run));
  }
  rows.emplace_back("golden", testing::timed("golden vectors reproduce", [&] {
                      return testing::check_golden_vectors(cfg.golden_dir);
                    }));
  std::size_t passed = 0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-46s %-6s %8s  %s\n", "module", "property", "result",
                "seconds", "detail");
  log << buf;
  for (const auto& [module, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-46s %-6s %8.3f  ", module.c_str(), r.name.c_str(),
                  r.passed ? "PASS" : "FAIL", r.seconds);
    log << buf << r.detail << "\n";
    passed += r.passed;
  }
  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::snprintf(buf, sizeof buf, "%zu/%zu checks passed in %.2f s\n", passed, rows.size(), total);
  log << buf;
  return passed == rows.size() ? kExitOk : kExitCheckFailed;
}

int cmd_golden(const RunConfig& cfg, std::ostream& log) {
  if (cfg.regen_golden) {
    golden::write_vectors(cfg.golden_dir);
    log << "regenerated golden vectors under " << (cfg.golden_dir / golden::kVersionDir).string()
        << "\n";
    return kExitOk;
  }
  bool ok = true;
  for (const auto& v : golden::verify_vectors(cfg.golden_dir)) {
    log << (v.passed ? "PASS " : "FAIL ") << v.name << ": " << v.detail << "\n";
    ok = ok && v.passed;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace msm::cli
