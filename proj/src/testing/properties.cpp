// SPDX-License-Identifier: Apache-2.0
#include "msm/testing/properties.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "msm/attention.hpp"
#include "msm/flow.hpp"
#include "msm/golden.hpp"
#include "msm/layout.hpp"
#include "msm/mask.hpp"
#include "msm/metrics.hpp"
#include "msm/numerics.hpp"
#include "msm/rng.hpp"
#include "msm/rope.hpp"
#include "msm/testing/oracles.hpp"

namespace msm::testing {

namespace {

// Small builder for the detail line of a result.
struct Detail {
  std::ostringstream os;
  Detail() { os.precision(3); }
  template <typename V>
  Detail& operator<<(const V& v) {
    os << v;
    return *this;
  }
  std::string str() const { return os.str(); }
};

CheckResult verdict(bool passed, const Detail& d) { return {"", passed, d.str(), 0}; }

}  // namespace

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------- numerics

CheckResult check_matmul_oracle() {
  Rng rng(11);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD a = rng.normal_tensor({8, 8});
    const TensorD b = rng.normal_tensor({8, 8});
    worst = std::max(worst, max_rel_diff(matmul(a, b), naive_matmul(a, b)));
  }
  return verdict(worst <= 1e-12, Detail() << "max rel err " << worst << " <= 1e-12");
}

CheckResult check_masked_softmax() {
  Rng rng(12);
  double worst_sum = 0;
  bool zeros_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = rng.integer(1, 8), cols = rng.integer(1, 12);
    const TensorD x = rng.normal_tensor({rows, cols}, 10.0);
    BoolMask mask(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      mask.set(r, rng.integer(0, cols - 1), true);
      for (std::size_t c = 0; c < cols; ++c) {
        if (rng.uniform() < 0.5) mask.set(r, c, true);
      }
    }
    const TensorD p = masked_softmax_rows(x, mask);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        if (!mask.get(r, c) && p.at(r, c) != 0.0) zeros_exact = false;
        sum += p.at(r, c);
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }
  bool throws = false;
  try {
    masked_softmax_rows(TensorD({1, 3}), BoolMask(1, 3));
  } catch (const ShapeError&) {
    throws = true;
  }
  return verdict(worst_sum <= 1e-6 && zeros_exact && throws,
                 Detail() << "row-sum err " << worst_sum << " <= 1e-6, masked zeros "
                          << (zeros_exact ? "exact" : "NOT exact") << ", empty row "
                          << (throws ? "rejected" : "accepted"));
}

CheckResult check_rotation() {
  Rng rng(13);
  const TensorD x = rng.normal_tensor({16, 8});
  const TensorD a1 = rng.normal_tensor({16, 4}, 3.0);
  const TensorD a2 = rng.normal_tensor({16, 4}, 3.0);
  const TensorD once = rotate_pairs(rotate_pairs(x, a1), a2);
  const TensorD both = rotate_pairs(x, add(a1, a2));
  const double additivity = max_abs_diff(once, both);
  double norm_err = 0;
  const TensorD y = rotate_pairs(x, a1);
  for (std::size_t i = 0; i < x.size(); i += 2) {
    const double n0 = std::hypot(x[i], x[i + 1]);
    const double n1 = std::hypot(y[i], y[i + 1]);
    norm_err = std::max(norm_err, std::abs(n1 - n0) / n0);
  }
  return verdict(additivity <= 1e-12 && norm_err <= 1e-12,
                 Detail() << "additivity " << additivity << ", pair-norm rel err " << norm_err
                          << " (both <= 1e-12)");
}

// ------------------------------------------------------------------ layout

CheckResult check_layout_tiling() {
  std::size_t checked = 0;
  for (const LayoutCase& c : enumerate_layout_cases(64)) {
    const TokenLayout layout = c.layout();
    std::vector<int> hits(layout.total, 0);
    std::size_t cursor = 0;
    for (const Range& r : layout.shot_video) {
      if (r.begin != cursor) return verdict(false, Detail() << "video ranges not contiguous");
      for (std::size_t t = r.begin; t < r.end; ++t) ++hits[t];
      cursor = r.end;
    }
    for (std::size_t i = 0; i < layout.copies.size(); ++i) {
      const auto& copy = layout.copies[i];
      if (copy.tokens.begin != cursor) return verdict(false, Detail() << "copy ranges out of order");
      if (i > 0) {
        const auto& prev = layout.copies[i - 1];
        const bool ordered = prev.ref_id < copy.ref_id ||
                             (prev.ref_id == copy.ref_id && prev.box_index + 1 == copy.box_index);
        if (!ordered) return verdict(false, Detail() << "copies not in (ref_id, box) order");
      }
      if (copy.shot != shot_of_frame(c.plan, copy.box.frame)) {
        return verdict(false, Detail() << "copy " << i << " stored in the wrong shot");
      }
      for (std::size_t t = copy.tokens.begin; t < copy.tokens.end; ++t) ++hits[t];
      cursor = copy.tokens.end;
    }
    if (cursor != layout.total) return verdict(false, Detail() << "ranges do not reach total");
    for (int h : hits) {
      if (h != 1) return verdict(false, Detail() << "token covered " << h << " times");
    }
    if (layout.to_json() != c.layout().to_json()) {
      return verdict(false, Detail() << "serialized layout not deterministic");
    }
    ++checked;
  }
  return verdict(checked > 0, Detail() << checked << " layouts tile [0, total) exactly once");
}

CheckResult check_text_replication() {
  ShotPlan plan{{2, 3}, {1, 1}, kDefaultPhaseShift};
  const std::vector<TensorD> texts = {TensorD::matrix(1, 2, {1, 2}),
                                      TensorD::matrix(2, 2, {3, 4, 5, 6})};
  const auto rep = replicate_text_embeddings(texts, plan);
  bool ok = rep.embeddings.shape() == Shape{5, 2, 2};
  for (std::size_t f = 0; f < 5 && ok; ++f) {
    const TensorD& src = texts[f < 2 ? 0 : 1];
    for (std::size_t l = 0; l < 2; ++l) {
      const bool valid = l < src.rows();
      ok = ok && rep.valid.get(f, l) == valid;
      for (std::size_t d = 0; d < 2; ++d) {
        const double expect = valid ? src.at(l, d) : 0.0;
        ok = ok && rep.embeddings[(f * 2 + l) * 2 + d] == expect;
      }
    }
  }
  return verdict(ok, Detail() << "shots [2,3] tile texts A,A,B,B,B with padding masked");
}

// -------------------------------------------------------------------- rope

CheckResult check_narrative_boundary(double phase_shift) {
  const RopeConfig config = RopeConfig::for_head_dim(16);
  const FreqVec ft = freq_vector(config.temporal_pairs, config.base);
  double worst = 0;
  std::size_t plans = 0;
  for (const auto& frames : std::vector<std::vector<std::size_t>>{
           {3, 2}, {1, 1, 1}, {2, 4, 1, 3}, {5}, {1, 6, 2, 2, 4}}) {
    for (const Grid grid : {Grid{1, 1}, Grid{2, 3}}) {
      ShotPlan plan{frames, grid, phase_shift};
      const TokenLayout layout = build_token_layout(plan, {});
      const RopeTable table = video_rope_angles(layout, plan, config);
      const std::size_t cells = grid.cells();
      for (std::size_t t = 1; t < plan.total_frames(); ++t) {
        const bool boundary = layout.frame_shot[t] != layout.frame_shot[t - 1];
        const double gap = boundary ? 1.0 + phase_shift : 1.0;
        for (std::size_t cell = 0; cell < cells; ++cell) {
          for (std::size_t p = 0; p < config.temporal_pairs; ++p) {
            const double d = table.angles.at(t * cells + cell, p) -
                             table.angles.at((t - 1) * cells + cell, p);
            worst = std::max(worst, std::abs(d - gap * ft.values[p]));
          }
        }
      }
      ++plans;
    }
  }
  return verdict(worst <= 1e-12, Detail() << plans << " plans, phi=" << phase_shift
                                          << ", max gap err " << worst << " <= 1e-12");
}

CheckResult check_box_sampling() {
  // Angles on the first height/width pair equal positions since f[0] = 1.
  const RopeConfig config = RopeConfig::for_head_dim(16);
  const std::size_t h0 = config.temporal_pairs;
  const std::size_t w0 = config.temporal_pairs + config.height_pairs;

  ShotPlan plan{{2, 2}, {4, 4}, kDefaultPhaseShift};
  const std::vector<ReferenceSpec> refs = {
      {RefKind::subject, {4, 1}, {{0, 1, 0.0, 1.0, 4.0, 3.0}}}};
  const TokenLayout layout = build_token_layout(plan, refs);
  const RopeTable t = reference_rope_angles(layout.copies[0], plan, config);
  const double expect[] = {1.0, 1.5, 2.0, 2.5};
  bool exact = true;
  for (std::size_t j = 0; j < 4; ++j) exact = exact && t.angles.at(j, h0) == expect[j];

  // Full-frame boxes reproduce the video grid on the box frame.
  bool grid_exact = true;
  for (const Grid g : {Grid{1, 1}, Grid{2, 3}, Grid{4, 4}, Grid{3, 5}}) {
    ShotPlan p{{2, 2}, g, kDefaultPhaseShift};
    const std::vector<ReferenceSpec> bg = {
        {RefKind::background, g,
         {{0, 0, 0.0, 0.0, double(g.width), double(g.height)},
          {0, 2, 0.0, 0.0, double(g.width), double(g.height)}}}};
    const TokenLayout l = build_token_layout(p, bg);
    const RopeTable video = video_rope_angles(l, p, config);
    for (const auto& copy : l.copies) {
      const RopeTable r = reference_rope_angles(copy, p, config);
      for (std::size_t c = 0; c < g.cells(); ++c) {
        for (std::size_t q = 0; q < config.pairs(); ++q) {
          grid_exact = grid_exact &&
                       r.angles.at(c, q) == video.angles.at(copy.box.frame * g.cells() + c, q);
        }
      }
    }
  }

  // Sampled heights strictly increase and stay inside [y1, y2).
  Rng rng(21);
  bool monotone = true;
  for (int trial = 0; trial < 200; ++trial) {
    const double y1 = rng.uniform(0.0, 3.0);
    const double y2 = y1 + rng.uniform(0.01, 4.0 - y1);
    const std::size_t hr = rng.integer(1, 6);
    const std::vector<ReferenceSpec> r = {{RefKind::subject, {hr, 1}, {{0, 0, 0.0, y1, 1.0, y2}}}};
    const TokenLayout l = build_token_layout(plan, r);
    const RopeTable a = reference_rope_angles(l.copies[0], plan, config);
    for (std::size_t j = 0; j < hr; ++j) {
      const double h = a.angles.at(j, h0);
      monotone = monotone && h >= y1 && h < y2 && (j == 0 || h > a.angles.at(j - 1, h0));
    }
    monotone = monotone && a.angles.at(0, w0) == 0.0;
  }
  return verdict(exact && grid_exact && monotone,
                 Detail() << "H_ref=4 box [1,3) -> {1,1.5,2,2.5} " << (exact ? "exact" : "MISMATCH")
                          << "; full-frame grid " << (grid_exact ? "exact" : "MISMATCH")
                          << "; monotone " << (monotone ? "yes" : "NO"));
}

CheckResult check_relative_position() {
  Rng rng(22);
  const FreqVec f = freq_vector(8);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const TensorD q = rng.normal_tensor({1, 16});
    const TensorD k = rng.normal_tensor({1, 16});
    const double p = rng.uniform(-50, 50), pp = rng.uniform(-50, 50), shift = rng.uniform(-100, 100);
    auto angles = [&](double pos) {
      TensorD a({1, 8});
      for (std::size_t i = 0; i < 8; ++i) a[i] = pos * f.values[i];
      return a;
    };
    const double base = inner(rotate_pairs(q, angles(p)), rotate_pairs(k, angles(pp)));
    const double moved =
        inner(rotate_pairs(q, angles(p + shift)), rotate_pairs(k, angles(pp + shift)));
    worst = std::max(worst, std::abs(base - moved));
  }
  return verdict(worst <= 1e-9, Detail() << "max |<q,k> shift diff| " << worst << " <= 1e-9");
}

CheckResult check_argmax_locality() {
  // One frame of 4x4 tokens, one subject with two disjoint 2x2-sampled boxes.
  ShotPlan plan{{1}, {4, 4}, kDefaultPhaseShift};
  const std::vector<ReferenceSpec> refs = {
      {RefKind::subject, {2, 2}, {{0, 0, 0.0, 0.0, 2.0, 2.0}, {0, 0, 2.0, 2.0, 4.0, 4.0}}}};
  const TokenLayout layout = build_token_layout(plan, refs);
  const std::size_t d = 8;
  const RopeConfig rope = RopeConfig::for_head_dim(d);
  AttnWeights<double> w;
  w.heads = 1;
  w.wq = w.wk = w.wv = w.wo = TensorD({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    w.wq.at(i, i) = w.wk.at(i, i) = w.wv.at(i, i) = w.wo.at(i, i) = 1.0;
  }
  InContext<double> ctx;
  ctx.video = TensorD::full({layout.video_tokens, d}, 1.0);
  ctx.refs.push_back(TensorD::full({4, d}, 1.0));
  const auto result = temporal_attention_forward(ctx, layout, plan, w, rope);
  const TensorD& probs = result.cache.probs[0];

  std::size_t checked = 0, wrong = 0;
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t x = 0; x < 4; ++x) {
      // Skip queries equidistant (or nearly) from the two box centers (1,1) and (3,3).
      if (h + x == 3 || h + x == 4) continue;
      const bool near_first = h + x < 3;
      double mass[2] = {0, 0};
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t t = layout.copies[c].tokens.begin; t < layout.copies[c].tokens.end; ++t) {
          mass[c] += probs.at(h * 4 + x, t);
        }
      }
      ++checked;
      if ((mass[0] > mass[1]) != near_first) ++wrong;
    }
  }
  return verdict(wrong == 0 && checked > 0,
                 Detail() << checked << " queries, " << wrong << " attend most to the farther copy");
}

// -------------------------------------------------------------------- mask

CheckResult check_mask_oracle(std::size_t min_layouts, std::size_t max_tokens) {
  const auto cases = enumerate_layout_cases(max_tokens);
  if (cases.size() < min_layouts) {
    return verdict(false, Detail() << "only " << cases.size() << " layouts enumerated");
  }
  std::size_t pairs = 0;
  for (const LayoutCase& c : cases) {
    const TokenLayout layout = c.layout();
    const BoolMask mask = build_mask(layout);
    for (std::size_t q = 0; q < layout.total; ++q) {
      bool any = false;
      for (std::size_t k = 0; k < layout.total; ++k) {
        const bool bit = mask.get(q, k);
        if (bit != mask_rule(layout, q, k)) return verdict(false, Detail() << "oracle mismatch");
        if (bit != mask.get(k, q)) return verdict(false, Detail() << "mask not symmetric");
        const bool qv = layout.is_video(q), kv = layout.is_video(k);
        if (qv && kv && !bit) return verdict(false, Detail() << "video block not full");
        if (!qv && !kv && bit != (layout.token_shot[q] == layout.token_shot[k])) {
          return verdict(false, Detail() << "copy block not block-diagonal by shot");
        }
        any = any || bit;
        ++pairs;
      }
      if (!any) return verdict(false, Detail() << "row " << q << " starves");
    }
  }
  return verdict(true, Detail() << cases.size() << " layouts, " << pairs
                                << " pairs match the rule; symmetric, block-diagonal");
}

// --------------------------------------------------------------- attention

CheckResult check_forward_equivalence(std::size_t cases, std::size_t max_tokens,
                                      std::size_t max_heads) {
  Rng rng(31);
  double worst = 0, worst_dense = 0;
  for (std::size_t i = 0; i < cases; ++i) {
    const LayoutCase c = random_layout_case(rng, max_tokens);
    const TokenLayout layout = c.layout();
    const std::size_t heads = rng.integer(1, max_heads);
    const std::size_t head_dim = 4 * rng.integer(2, 4);
    const std::size_t d = heads * head_dim;
    const RopeConfig rope = RopeConfig::for_head_dim(head_dim);
    const auto w = random_weights(rng, d, heads);
    const auto ctx = random_context(rng, layout, d);
    const TensorD naive = temporal_attention_naive(ctx, layout, c.plan, w, rope).stacked();
    const TensorD fast = temporal_attention_forward(ctx, layout, c.plan, w, rope).output.stacked();
    const TensorD dense =
        temporal_attention_forward(ctx, layout, c.plan, w, rope, AttentionKernel::dense)
            .output.stacked();
    worst = std::max(worst, max_rel_diff(fast, naive));
    worst_dense = std::max(worst_dense, max_rel_diff(dense, naive));
  }
  return verdict(worst <= 1e-9 && worst_dense <= 1e-9,
                 Detail() << cases << " configs, block-sparse " << worst << ", dense "
                          << worst_dense << " (max rel err <= 1e-9)");
}

CheckResult check_isolation() {
  Rng rng(32);
  double worst = 0;
  std::size_t probes = 0;
  for (int trial = 0; trial < 40; ++trial) {
    // 2-3 shots; reference m lives entirely in shot m.
    ShotPlan plan;
    const std::size_t shots = rng.integer(2, 3);
    for (std::size_t i = 0; i < shots; ++i) plan.shot_frames.push_back(rng.integer(1, 2));
    plan.grid = {rng.integer(1, 2), rng.integer(1, 2)};
    std::vector<ReferenceSpec> refs;
    for (std::size_t m = 0; m < shots; ++m) {
      const std::size_t first = plan.first_frame(m);
      const double W = double(plan.grid.width), H = double(plan.grid.height);
      if (m % 2 == 0) {
        ReferenceSpec s{RefKind::subject, {rng.integer(1, 2), rng.integer(1, 2)}, {}};
        for (std::size_t f = 0; f < plan.shot_frames[m]; ++f) {
          s.boxes.push_back({m, first + f, 0.0, 0.0, W * rng.uniform(0.3, 1.0), H});
        }
        refs.push_back(s);
      } else {
        refs.push_back({RefKind::background, {1, 2}, {{m, first, 0.0, 0.0, W, H}}});
      }
    }
    const TokenLayout layout = build_token_layout(plan, refs);
    const std::size_t heads = rng.integer(1, 2);
    const std::size_t d = heads * 8;
    const RopeConfig rope = RopeConfig::for_head_dim(8);
    const auto w = random_weights(rng, d, heads);
    const auto ctx = random_context(rng, layout, d);
    const auto base = temporal_attention_forward(ctx, layout, plan, w, rope).output;
    for (std::size_t j = 0; j < shots; ++j) {
      auto perturbed = ctx;
      perturbed.refs[j] = rng.normal_tensor(perturbed.refs[j].shape(), 5.0);
      const auto out = temporal_attention_forward(perturbed, layout, plan, w, rope).output;
      for (std::size_t i = 0; i < shots; ++i) {
        if (i == j) continue;
        for (std::size_t t = layout.shot_video[i].begin; t < layout.shot_video[i].end; ++t) {
          for (std::size_t c = 0; c < d; ++c) {
            worst = std::max(worst, std::abs(out.video.at(t, c) - base.video.at(t, c)));
          }
        }
      }
      ++probes;
    }
  }
  return verdict(worst <= 1e-12, Detail() << probes << " perturbations, max cross-shot change "
                                          << worst << " <= 1e-12");
}

CheckResult check_phase_shift_effect() {
  const std::size_t d = 8;
  const RopeConfig rope = RopeConfig::for_head_dim(d);
  Rng rng(33);
  const TensorD content = rng.normal_tensor({1, d});
  AttnWeights<double> w;
  w.heads = 1;
  w.wq = w.wk = w.wv = w.wo = TensorD({d, d});
  for (std::size_t i = 0; i < d; ++i) w.wq.at(i, i) = w.wk.at(i, i) = w.wv.at(i, i) = w.wo.at(i, i) = 1.0;
  auto weight_across = [&](double phi) {
    ShotPlan plan{{2, 2}, {1, 1}, phi};
    const TokenLayout layout = build_token_layout(plan, {});
    InContext<double> ctx;
    ctx.video = TensorD({4, d});
    for (std::size_t t = 0; t < 4; ++t) {
      std::copy(content.data().begin(), content.data().end(), ctx.video.row(t).begin());
    }
    const auto r = temporal_attention_forward(ctx, layout, plan, w, rope);
    return r.cache.probs[0].at(1, 2);  // last frame of shot 0 -> first frame of shot 1
  };
  const double shifted = weight_across(0.5), flat = weight_across(0.0);
  return verdict(shifted < flat, Detail() << "weight across boundary " << shifted
                                          << " (phi=0.5) < " << flat << " (phi=0)");
}

CheckResult check_gradients() {
  // Two 1-frame shots on a 1x1 grid, a subject with one box per shot and a
  // background covering both shots: 2 video tokens + 4 copies.
  ShotPlan plan{{1, 1}, {1, 1}, kDefaultPhaseShift};
  const std::vector<ReferenceSpec> refs = {
      {RefKind::subject, {1, 1}, {{0, 0, 0.1, 0.2, 0.7, 0.9}, {0, 1, 0.4, 0.0, 1.0, 0.5}}},
      {RefKind::background, {1, 1}, {{1, 0, 0.0, 0.0, 1.0, 1.0}, {1, 1, 0.0, 0.0, 1.0, 1.0}}}};
  const TokenLayout layout = build_token_layout(plan, refs);
  const std::size_t d = 16, heads = 2;
  const RopeConfig rope = RopeConfig::for_head_dim(8);
  Rng rng(34);
  const auto w = random_weights(rng, d, heads);
  const auto ctx = random_context(rng, layout, d);
  InContext<double> upstream = random_context(rng, layout, d);
  const TensorD g = upstream.stacked();

  const auto fwd = temporal_attention_forward(ctx, layout, plan, w, rope);
  const AttentionGradients grads = temporal_attention_backward(fwd.cache, upstream);

  auto loss = [&](const InContext<double>& c, const AttnWeights<double>& ww) {
    return inner(temporal_attention_forward(c, layout, plan, ww, rope).output.stacked(), g);
  };
  const double step = 1e-5;
  double worst = 0;
  std::ostringstream parts;
  parts.precision(3);
  auto record = [&](const char* name, const TensorD& analytic, const TensorD& numeric) {
    const double err = max_rel_diff(analytic, numeric);
    worst = std::max(worst, err);
    parts << name << "=" << err << " ";
  };
  record("z", grads.ctx.video, finite_difference([&](const TensorD& x) {
           auto c = ctx;
           c.video = x;
           return loss(c, w);
         }, ctx.video, step));
  for (std::size_t m = 0; m < ctx.refs.size(); ++m) {
    record(m == 0 ? "z_ref0" : "z_ref1", grads.ctx.refs[m], finite_difference([&](const TensorD& x) {
             auto c = ctx;
             c.refs[m] = x;
             return loss(c, w);
           }, ctx.refs[m], step));
  }
  const std::pair<const char*, TensorD AttnWeights<double>::*> params[] = {
      {"W_q", &AttnWeights<double>::wq}, {"W_k", &AttnWeights<double>::wk},
      {"W_v", &AttnWeights<double>::wv}, {"W_o", &AttnWeights<double>::wo}};
  const TensorD* analytic[] = {&grads.wq, &grads.wk, &grads.wv, &grads.wo};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto member = params[i].second;
    record(params[i].first, *analytic[i], finite_difference([&](const TensorD& x) {
             auto ww = w;
             ww.*member = x;
             return loss(ctx, ww);
           }, w.*member, step));
  }
  return verdict(layout.total == 6 && worst <= 1e-6,
                 Detail() << layout.total << " tokens, rel err " << parts.str() << "(<= 1e-6)");
}

// -------------------------------------------------------------------- flow

CheckResult check_path_identity() {
  // Dyadic values and tau keep every operation exact.
  Rng rng(41);
  bool exact = true;
  for (double tau : {0.0, 0.125, 0.25, 0.5, 0.75, 1.0}) {
    TensorD z0({4, 6}), eps({4, 6});
    for (std::size_t i = 0; i < z0.size(); ++i) {
      z0[i] = static_cast<double>(static_cast<long>(rng.integer(0, 64)) - 32) / 8.0;
      eps[i] = static_cast<double>(static_cast<long>(rng.integer(0, 64)) - 32) / 8.0;
    }
    const FlowSample s{z0, eps, tau};
    const TensorD zt = interpolate(s);
    const TensorD v = velocity_target(s);
    for (std::size_t i = 0; i < zt.size(); ++i) exact = exact && zt[i] + (1.0 - tau) * v[i] == eps[i];
    // The straight path has derivative eps - z0 at every tau.
    const double h = 0.125;
    if (tau + h <= 1.0) {
      const TensorD ahead = interpolate({z0, eps, tau + h});
      for (std::size_t i = 0; i < zt.size(); ++i) exact = exact && (ahead[i] - zt[i]) / h == v[i];
    }
  }
  // Generic values: identity holds to rounding.
  double generic = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const FlowSample s{rng.normal_tensor({8, 8}), rng.normal_tensor({8, 8}), rng.uniform()};
    const TensorD lhs = add(interpolate(s), scale(velocity_target(s), 1.0 - s.tau));
    generic = std::max(generic, max_abs_diff(lhs, s.eps));
  }
  return verdict(exact && generic <= 1e-14,
                 Detail() << "dyadic identity " << (exact ? "exact" : "NOT exact")
                          << ", generic max err " << generic << " <= 1e-14");
}

CheckResult check_euler_convergence() {
  Rng rng(42);
  const TensorD z = rng.normal_tensor({4, 4});
  const VelocityField linear = [](const TensorD& x, double) { return x; };
  auto rel_err = [&](std::size_t steps) {
    const TensorD out = euler_sample(linear, z, steps).z;
    return max_rel_diff(out, scale(z, std::exp(-1.0)));
  };
  const double err50 = rel_err(50);
  const std::vector<std::size_t> grid = {10, 40, 160, 640};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t n : grid) {
    const double x = std::log(static_cast<double>(n)), y = std::log(rel_err(n));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(grid.size());
  const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  return verdict(err50 <= 0.015 && std::abs(slope + 1.0) <= 0.1,
                 Detail() << "50-step rel err " << err50 << " <= 0.015, log-log slope " << slope
                          << " within 10% of -1");
}

CheckResult check_loss_properties() {
  Rng rng(43);
  ShotPlan plan{{2, 1}, {2, 3}, kDefaultPhaseShift};
  const TokenLayout layout = build_token_layout(plan, {});
  const std::vector<Box> boxes = {{0, 0, 0.5, 0.0, 2.0, 1.5}, {0, 2, 1.0, 1.0, 3.0, 2.0}};
  const TensorD w = subject_weight_map(layout, plan, boxes, 4);
  bool ok = true;
  for (double v : w.data()) ok = ok && (v == 1.0 || v == 2.0);
  double homog = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD target = rng.normal_tensor(w.shape());
    const TensorD pred = rng.normal_tensor(w.shape());
    const double l1 = weighted_velocity_loss(pred, target, w);
    const TensorD pred2 = sub(target, scale(sub(target, pred), 2.0));
    const double l2 = weighted_velocity_loss(pred2, target, w);
    homog = std::max(homog, std::abs(l2 - 4.0 * l1) / l1);
    ok = ok && l1 > 0 && weighted_velocity_loss(target, target, w) == 0.0;
  }
  return verdict(ok && homog <= 1e-12,
                 Detail() << "weights in {1,2}, loss >= 0 with zero at pred=target, "
                          << "degree-2 homogeneity err " << homog);
}

CheckResult check_inference_defaults() {
  const bool ok = kDefaultSamplingSteps == 50 && kDefaultGuidanceScale == 7.5 &&
                  kDefaultPhaseShift == 0.5 && ShotPlan{}.phase_shift == 0.5;
  const TensorD guided =
      cfg_combine(TensorD::full({1}, 2.0), TensorD::full({1}, 0.0), kDefaultGuidanceScale);
  return verdict(ok && guided[0] == 15.0,
                 Detail() << "steps " << kDefaultSamplingSteps << ", cfg scale "
                          << kDefaultGuidanceScale << ", phase shift " << kDefaultPhaseShift
                          << ", cfg(2,0) = " << guided[0]);
}

// ----------------------------------------------------------------- metrics

CheckResult check_iou() {
  using metrics::DetBox;
  const double v = metrics::iou({0, 0, 0, 0, 2, 2}, {0, 0, 1, 1, 3, 3});
  const double err = std::abs(v - 1.0 / 7.0);
  Rng rng(51);
  bool props = true;
  for (int trial = 0; trial < 500; ++trial) {
    auto box = [&] {
      const double x = rng.uniform(0, 10), y = rng.uniform(0, 10);
      return DetBox{0, 0, x, y, x + rng.uniform(0.1, 5), y + rng.uniform(0.1, 5)};
    };
    const DetBox a = box(), b = box();
    const double ab = metrics::iou(a, b), ba = metrics::iou(b, a);
    props = props && ab == ba && ab >= 0 && ab <= 1 && metrics::iou(a, a) == 1.0;
  }
  return verdict(err <= 1e-12 && props,
                 Detail() << "(0,0,2,2) vs (1,1,3,3) err " << err
                          << " vs 1/7; symmetric, bounded, self-IoU 1");
}

namespace {

void increasing_sequences(std::size_t max_frame, std::size_t max_len, std::size_t from,
                          std::vector<std::size_t>& cur,
                          std::vector<std::vector<std::size_t>>& out) {
  out.push_back(cur);
  if (cur.size() == max_len) return;
  for (std::size_t f = from; f <= max_frame; ++f) {
    cur.push_back(f);
    increasing_sequences(max_frame, max_len, f + 1, cur, out);
    cur.pop_back();
  }
}

}  // namespace

CheckResult check_transition_matching() {
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::size_t> cur;
  increasing_sequences(10, 4, 1, cur, seqs);
  std::size_t instances = 0;
  double worst = 0;
  auto compare = [&](const std::vector<std::size_t>& p, const std::vector<std::size_t>& g) {
    for (double miss : {metrics::default_miss_cost(g), 3.0}) {
      const double dp = metrics::match_transitions(p, g, miss).total_cost;
      worst = std::max(worst, std::abs(dp - exhaustive_transition_cost(p, g, miss)));
    }
    ++instances;
  };
  // Every pair of sequences over frames 1..10, then random pairs over 1..20.
  for (const auto& g : seqs) {
    if (g.empty()) continue;
    for (const auto& p : seqs) compare(p, g);
  }
  Rng rng(52);
  for (int trial = 0; trial < 20000; ++trial) {
    auto draw = [&](std::size_t min_len) {
      std::vector<std::size_t> s;
      const std::size_t len = rng.integer(min_len, 4);
      while (s.size() < len) {
        const std::size_t f = rng.integer(1, 20);
        if (std::find(s.begin(), s.end(), f) == s.end()) s.push_back(f);
      }
      std::sort(s.begin(), s.end());
      return s;
    };
    compare(draw(0), draw(1));
  }
  return verdict(worst <= 1e-12,
                 Detail() << instances << " instances, DP vs enumeration max diff " << worst);
}

CheckResult check_metric_identity() {
  Rng rng(53);
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<metrics::DetBox> boxes;
    const std::size_t n = rng.integer(1, 6);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 5), y = rng.uniform(0, 5);
      boxes.push_back({i % 2, i, x, y, x + rng.uniform(0.5, 3), y + rng.uniform(0.5, 3)});
    }
    ok = ok && metrics::grounding_miou(boxes, boxes) == 1.0;
    std::vector<std::size_t> cuts;
    std::size_t f = 0;
    for (std::size_t i = 0; i < n; ++i) cuts.push_back(f += rng.integer(1, 30));
    ok = ok && metrics::transition_deviation(cuts, cuts) == 0.0;
  }
  return verdict(ok, Detail() << "identity inputs give mIoU 1.0 and deviation 0.0");
}

CheckResult check_golden_vectors(const std::filesystem::path& dir) {
  const auto verdicts = golden::verify_vectors(dir);
  Detail d;
  bool ok = !verdicts.empty();
  for (const auto& v : verdicts) {
    if (!v.passed) {
      ok = false;
      d << "FAILED " << v.name << ": " << v.detail << "; ";
    }
  }
  if (ok) d << verdicts.size() << " golden vectors reproduce";
  return verdict(ok, d);
}

std::vector<PropertyCheck> property_checks() {
  return {
      {"numerics", "matmul matches triple-loop oracle", check_matmul_oracle},
      {"numerics", "masked softmax is row-stochastic", check_masked_softmax},
      {"numerics", "pair rotation preserves norm and composes", check_rotation},
      {"layout", "token ranges tile the sequence", check_layout_tiling},
      {"layout", "text embeddings replicate per shot", check_text_replication},
      {"rope", "narrative phase gaps at shot boundaries", [] { return check_narrative_boundary(0.5); }},
      {"rope", "box-sampled reference positions", check_box_sampling},
      {"rope", "logits depend on relative position only", check_relative_position},
      {"rope", "video queries favour the nearest box copy", check_argmax_locality},
      {"mask", "dense mask equals pairwise rule", [] { return check_mask_oracle(200, 64); }},
      {"attention", "forward matches naive transcription", [] { return check_forward_equivalence(100, 32, 4); }},
      {"attention", "references never leak across shots", check_isolation},
      {"attention", "phase shift lowers cross-boundary weight", check_phase_shift_effect},
      {"attention", "backward matches finite differences", check_gradients},
      {"flow", "straight-path identity", check_path_identity},
      {"flow", "Euler sampler is first order", check_euler_convergence},
      {"flow", "weighted loss properties", check_loss_properties},
      {"flow", "inference defaults", check_inference_defaults},
      {"metrics", "IoU fixture and symmetry", check_iou},
      {"metrics", "transition DP equals enumeration", check_transition_matching},
      {"metrics", "identity inputs score perfectly", check_metric_identity},
  };
}

}  // namespace msm::testing
