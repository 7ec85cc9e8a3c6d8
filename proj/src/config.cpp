// SPDX-License-Identifier: Apache-2.0
#include "msm/config.hpp"

#include <cmath>

#include <json.hpp>

#include "msm/io.hpp"

namespace msm {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ValidationError(field + ": " + msg);
}

const json& member(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(where.empty() ? key : where + "." + key, "missing required field");
  return *it;
}

std::size_t as_count(const json& v, const std::string& field, std::size_t min_value) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
    fail(field, "expected a non-negative integer");
  }
  const auto n = v.get<std::size_t>();
  if (n < min_value) fail(field, "must be >= " + std::to_string(min_value));
  return n;
}

double as_real(const json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(field, "must be finite");
  return x;
}

Grid parse_grid(const json& v, const std::string& field) {
  Grid g;
  g.height = as_count(member(v, "H", field), field + ".H", 1);
  g.width = as_count(member(v, "W", field), field + ".W", 1);
  return g;
}

ReferenceSpec parse_ref(const json& v, std::size_t m) {
  const std::string where = "refs[" + std::to_string(m) + "]";
  ReferenceSpec ref;
  const json& kind = member(v, "kind", where);
  if (kind == "subject") {
    ref.kind = RefKind::subject;
  } else if (kind == "background") {
    ref.kind = RefKind::background;
  } else {
    fail(where + ".kind", "expected \"subject\" or \"background\"");
  }
  ref.grid = parse_grid(member(v, "grid", where), where + ".grid");
  const json& boxes = member(v, "boxes", where);
  if (!boxes.is_array()) fail(where + ".boxes", "expected an array");
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const std::string field = where + ".boxes[" + std::to_string(b) + "]";
    const json& row = boxes[b];
    if (!row.is_array() || row.size() != 6) fail(field, "expected [m, t, x1, y1, x2, y2]");
    Box box;
    box.ref_id = as_count(row[0], field + "[0]", 0);
    box.frame = as_count(row[1], field + "[1]", 0);
    box.x1 = as_real(row[2], field + "[2]");
    box.y1 = as_real(row[3], field + "[3]");
    box.x2 = as_real(row[4], field + "[4]");
    box.y2 = as_real(row[5], field + "[5]");
    ref.boxes.push_back(box);
  }
  return ref;
}

AttentionConfig parse_attention(const json& v) {
  AttentionConfig a;
  a.d_model = as_count(member(v, "d_model", "attention"), "attention.d_model", 1);
  a.heads = as_count(member(v, "heads", "attention"), "attention.heads", 1);
  if (a.d_model % a.heads != 0) fail("attention.heads", "must divide d_model");
  const std::size_t head_dim = a.d_model / a.heads;
  if (head_dim % 2 != 0) fail("attention.d_model", "head dimension d_model/heads must be even");
  double base = kDefaultRopeBase;
  if (v.contains("rope_base")) {
    base = as_real(v["rope_base"], "attention.rope_base");
    if (!(base > 1.0)) fail("attention.rope_base", "must be > 1");
  }
  a.rope = RopeConfig::for_head_dim(head_dim, base);
  if (v.contains("pairs")) {
    const json& p = v["pairs"];
    if (!p.is_array() || p.size() != 3) fail("attention.pairs", "expected [P_t, P_h, P_w]");
    a.rope.temporal_pairs = as_count(p[0], "attention.pairs[0]", 0);
    a.rope.height_pairs = as_count(p[1], "attention.pairs[1]", 0);
    a.rope.width_pairs = as_count(p[2], "attention.pairs[2]", 0);
    if (a.rope.head_dim() != head_dim) {
      fail("attention.pairs", "pairs must sum to head_dim/2 = " + std::to_string(head_dim / 2));
    }
  }
  return a;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) fail("<root>", "expected an object");
  if (doc.contains("version") && doc["version"] != kConfigVersion) {
    fail("version", "unsupported config version (expected 1)");
  }
  Scenario s;
  const json& shots = member(doc, "shots", "");
  if (!shots.is_array() || shots.empty()) fail("shots", "expected a non-empty array");
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const std::string where = "shots[" + std::to_string(i) + "]";
    s.plan.shot_frames.push_back(as_count(member(shots[i], "frames", where), where + ".frames", 1));
  }
  s.plan.grid = parse_grid(member(doc, "grid", ""), "grid");
  if (doc.contains("phase_shift")) {
    s.plan.phase_shift = as_real(doc["phase_shift"], "phase_shift");
    if (s.plan.phase_shift < 0) fail("phase_shift", "must be >= 0");
  }
  if (doc.contains("refs")) {
    const json& refs = doc["refs"];
    if (!refs.is_array()) fail("refs", "expected an array");
    for (std::size_t m = 0; m < refs.size(); ++m) s.refs.push_back(parse_ref(refs[m], m));
  }
  if (doc.contains("attention")) s.attention = parse_attention(doc["attention"]);
  // Cross-field checks (box ranges, background rules) live in the layout builder.
  build_token_layout(s.plan, s.refs);
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(io::read_text(path));
}

std::string scenario_to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["version"] = kConfigVersion;
  nlohmann::ordered_json shots = nlohmann::ordered_json::array();
  for (auto f : s.plan.shot_frames) shots.push_back({{"frames", f}});
  j["shots"] = shots;
  j["grid"] = {{"H", s.plan.grid.height}, {"W", s.plan.grid.width}};
  j["phase_shift"] = s.plan.phase_shift;
  nlohmann::ordered_json refs = nlohmann::ordered_json::array();
  for (const auto& r : s.refs) {
    nlohmann::ordered_json boxes = nlohmann::ordered_json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.ref_id, b.frame, b.x1, b.y1, b.x2, b.y2});
    refs.push_back({{"kind", to_string(r.kind)},
                    {"grid", {{"H", r.grid.height}, {"W", r.grid.width}}},
                    {"boxes", boxes}});
  }
  j["refs"] = refs;
  const auto& a = s.attention;
  j["attention"] = {{"d_model", a.d_model},
                    {"heads", a.heads},
                    {"rope_base", a.rope.base},
                    {"pairs", {a.rope.temporal_pairs, a.rope.height_pairs, a.rope.width_pairs}}};
  return j.dump(2) + "\n";
}

}  // namespace msm
