// SPDX-License-Identifier: Apache-2.0
#include "msm/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "msm/mask.hpp"
#include "msm/numerics.hpp"

namespace msm {

template <typename T>
void validate_weights(const AttnWeights<T>& w) {
  const std::size_t d = w.wq.rank() == 2 ? w.wq.rows() : 0;
  for (const Tensor<T>* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    if (m->rank() != 2 || m->rows() != d || m->cols() != d) {
      throw ShapeError("attention weights must all be square [D x D] with a shared D");
    }
  }
  if (w.heads == 0 || d % w.heads != 0) {
    throw ShapeError("d_model " + std::to_string(d) + " is not divisible by " +
                     std::to_string(w.heads) + " heads");
  }
  if ((d / w.heads) % 2 != 0) throw ShapeError("head dimension must be even");
}

template <typename T>
Tensor<T> InContext<T>::stacked() const {
  std::vector<Tensor<T>> parts;
  parts.reserve(1 + refs.size());
  parts.push_back(video);
  parts.insert(parts.end(), refs.begin(), refs.end());
  return vstack<T>(parts);
}

template <typename T>
void validate_context(const InContext<T>& ctx, const TokenLayout& layout, std::size_t d_model) {
  if (ctx.video.rank() != 2 || ctx.video.rows() != layout.video_tokens ||
      ctx.video.cols() != d_model) {
    throw ShapeError("video latents " + shape_str(ctx.video.shape()) + " expected [" +
                     std::to_string(layout.video_tokens) + "x" + std::to_string(d_model) + "]");
  }
  if (ctx.refs.size() != layout.ref_count()) {
    throw ShapeError(std::to_string(ctx.refs.size()) + " reference blocks for " +
                     std::to_string(layout.ref_count()) + " references");
  }
  for (std::size_t m = 0; m < ctx.refs.size(); ++m) {
    const auto& r = ctx.refs[m];
    if (r.rank() != 2 || r.rows() != layout.ref_grids[m].cells() || r.cols() != d_model) {
      throw ShapeError("reference " + std::to_string(m) + " latents " + shape_str(r.shape()) +
                       " expected [" + std::to_string(layout.ref_grids[m].cells()) + "x" +
                       std::to_string(d_model) + "]");
    }
  }
}

template <typename T>
Tensor<T> expand_copies(const InContext<T>& ctx, const TokenLayout& layout) {
  validate_context(ctx, layout, ctx.video.cols());
  const std::size_t d = ctx.video.cols();
  Tensor<T> out({layout.total, d});
  auto dst = out.data();
  std::copy(ctx.video.data().begin(), ctx.video.data().end(), dst.begin());
  for (const auto& copy : layout.copies) {
    const auto src = ctx.refs[copy.ref_id].data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<long>(copy.tokens.begin * d));
  }
  return out;
}

template <typename T>
Tensor<T> aggregate_copies(const Tensor<T>& attn_out, const TokenLayout& layout) {
  if (attn_out.rank() != 2 || attn_out.rows() != layout.total) {
    throw ShapeError("aggregate_copies: expected " + std::to_string(layout.total) +
                     " token rows, got " + shape_str(attn_out.shape()));
  }
  const std::size_t d = attn_out.cols();
  Tensor<T> out({layout.video_tokens + layout.ref_tokens(), d});
  std::copy_n(attn_out.data().begin(), layout.video_tokens * d, out.data().begin());
  std::size_t row = layout.video_tokens;
  for (std::size_t m = 0; m < layout.ref_count(); ++m) {
    const std::size_t cells = layout.ref_grids[m].cells();
    const auto& ids = layout.ref_copies[m];
    const T inv = T(1) / static_cast<T>(ids.size());
    for (std::size_t c = 0; c < cells; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        T acc = 0;
        for (std::size_t id : ids) acc += attn_out.at(layout.copies[id].tokens.begin + c, j);
        out.at(row + c, j) = acc * inv;
      }
    }
    row += cells;
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> head_slice(const Tensor<T>& x, std::size_t head, std::size_t head_dim) {
  Tensor<T> out({x.rows(), head_dim});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy_n(&x.at(r, head * head_dim), head_dim, &out.at(r, 0));
  }
  return out;
}

template <typename T>
void put_head(Tensor<T>& dst, const Tensor<T>& src, std::size_t head) {
  const std::size_t head_dim = src.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    std::copy_n(&src.at(r, 0), head_dim, &dst.at(r, head * head_dim));
  }
}

template <typename T>
InContext<T> split_output(const Tensor<T>& out, const TokenLayout& layout) {
  const std::size_t d = out.cols();
  InContext<T> ctx;
  ctx.video = Tensor<T>({layout.video_tokens, d});
  std::copy_n(out.data().begin(), layout.video_tokens * d, ctx.video.data().begin());
  std::size_t offset = layout.video_tokens * d;
  for (const Grid& g : layout.ref_grids) {
    Tensor<T> block({g.cells(), d});
    std::copy_n(out.data().begin() + static_cast<long>(offset), block.size(), block.data().begin());
    offset += block.size();
    ctx.refs.push_back(std::move(block));
  }
  return ctx;
}

template <typename T>
void check_inputs(const InContext<T>& ctx, const TokenLayout& layout,
                  const AttnWeights<T>& weights, const RopeConfig& rope) {
  validate_weights(weights);
  validate_context(ctx, layout, weights.d_model());
  if (rope.head_dim() != weights.head_dim()) {
    throw ShapeError("rope config covers head_dim " + std::to_string(rope.head_dim()) +
                     " but heads have " + std::to_string(weights.head_dim()));
  }
}

// Attention of one head restricted to the mask's visible key ranges.
template <typename T>
void block_sparse_head(const Tensor<T>& qh, const Tensor<T>& kh, const Tensor<T>& vh,
                       const TokenLayout& layout, const MaskBlocks& blocks, T scale_factor,
                       Tensor<T>& probs, Tensor<T>& out) {
  const std::size_t n = qh.rows();
  const std::size_t hd = qh.cols();
  std::vector<T> logits(n);
  for (std::size_t q = 0; q < n; ++q) {
    const auto ranges = visible_keys(blocks, layout, q);
    T peak = -std::numeric_limits<T>::infinity();
    for (const Range& r : ranges) {
      for (std::size_t k = r.begin; k < r.end; ++k) {
        T dot = 0;
        for (std::size_t c = 0; c < hd; ++c) dot += qh.at(q, c) * kh.at(k, c);
        logits[k] = dot * scale_factor;
        peak = std::max(peak, logits[k]);
      }
    }
    T denom = 0;
    for (const Range& r : ranges) {
      for (std::size_t k = r.begin; k < r.end; ++k) {
        logits[k] = std::exp(logits[k] - peak);
        denom += logits[k];
      }
    }
    for (const Range& r : ranges) {
      for (std::size_t k = r.begin; k < r.end; ++k) {
        const T p = logits[k] / denom;
        probs.at(q, k) = p;
        for (std::size_t c = 0; c < hd; ++c) out.at(q, c) += p * vh.at(k, c);
      }
    }
  }
}

}  // namespace

template <typename T>
AttentionResult<T> temporal_attention_forward(const InContext<T>& ctx, const TokenLayout& layout,
                                              const ShotPlan& plan, const AttnWeights<T>& weights,
                                              const RopeConfig& rope, AttentionKernel kernel) {
  check_inputs(ctx, layout, weights, rope);
  const std::size_t heads = weights.heads;
  const std::size_t hd = weights.head_dim();
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));

  AttentionResult<T> result;
  auto& cache = result.cache;
  cache.layout = layout;
  cache.weights = weights;
  cache.angles = layout_rope_angles(layout, plan, rope).angles;
  cache.expanded = expand_copies(ctx, layout);
  cache.q = rotate_heads(matmul(cache.expanded, weights.wq), cache.angles, heads);
  cache.k = rotate_heads(matmul(cache.expanded, weights.wk), cache.angles, heads);
  cache.v = matmul(cache.expanded, weights.wv);
  cache.attn = Tensor<T>({layout.total, weights.d_model()});
  cache.probs.assign(heads, Tensor<T>({layout.total, layout.total}));

  if (kernel == AttentionKernel::dense) {
    const BoolMask mask = build_mask(layout);
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor<T> logits =
          scale(matmul_nt(head_slice(cache.q, h, hd), head_slice(cache.k, h, hd)), scale_factor);
      cache.probs[h] = masked_softmax_rows(logits, mask);
      put_head(cache.attn, matmul(cache.probs[h], head_slice(cache.v, h, hd)), h);
    }
  } else {
    const MaskBlocks blocks = build_mask_blocks(layout);
    std::vector<Tensor<T>> head_out(heads);
    parallel_for(heads, [&](std::size_t h) {
      head_out[h] = Tensor<T>({layout.total, hd});
      block_sparse_head(head_slice(cache.q, h, hd), head_slice(cache.k, h, hd),
                        head_slice(cache.v, h, hd), layout, blocks, scale_factor,
                        cache.probs[h], head_out[h]);
    });
    for (std::size_t h = 0; h < heads; ++h) put_head(cache.attn, head_out[h], h);
  }

  cache.aggregated = aggregate_copies(cache.attn, layout);
  result.output = split_output(matmul(cache.aggregated, weights.wo), layout);
  return result;
}

template <typename T>
InContext<T> temporal_attention_naive(const InContext<T>& ctx, const TokenLayout& layout,
                                      const ShotPlan& plan, const AttnWeights<T>& weights,
                                      const RopeConfig& rope) {
  check_inputs(ctx, layout, weights, rope);
  const std::size_t d = weights.d_model();
  const std::size_t heads = weights.heads;
  const std::size_t hd = weights.head_dim();
  const std::size_t pairs = hd / 2;
  const std::size_t n = layout.total;

  auto project = [d](std::span<const T> z, const Tensor<T>& w) {
    std::vector<T> out(d, T(0));
    for (std::size_t j = 0; j < d; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += z[i] * w.at(i, j);
      out[j] = acc;
    }
    return out;
  };
  auto rotate = [&](std::vector<T>& row, std::span<const double> theta) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t p = 0; p < pairs; ++p) {
        const std::size_t c = h * hd + 2 * p;
        const T cs = static_cast<T>(std::cos(theta[p]));
        const T sn = static_cast<T>(std::sin(theta[p]));
        const T a = row[c], b = row[c + 1];
        row[c] = a * cs - b * sn;
        row[c + 1] = a * sn + b * cs;
      }
    }
  };

  std::vector<std::vector<T>> q(n), k(n), v(n);
  const RopeTable video_angles = video_rope_angles(layout, plan, rope);
  for (std::size_t t = 0; t < layout.video_tokens; ++t) {
    q[t] = project(ctx.video.row(t), weights.wq);
    k[t] = project(ctx.video.row(t), weights.wk);
    v[t] = project(ctx.video.row(t), weights.wv);
    rotate(q[t], video_angles.angles.row(t));
    rotate(k[t], video_angles.angles.row(t));
  }
  for (std::size_t m = 0; m < layout.ref_count(); ++m) {
    const std::size_t cells = layout.ref_grids[m].cells();
    std::vector<std::vector<T>> rq(cells), rk(cells), rv(cells);
    for (std::size_t c = 0; c < cells; ++c) {
      rq[c] = project(ctx.refs[m].row(c), weights.wq);
      rk[c] = project(ctx.refs[m].row(c), weights.wk);
      rv[c] = project(ctx.refs[m].row(c), weights.wv);
    }
    for (std::size_t id : layout.ref_copies[m]) {
      const auto& copy = layout.copies[id];
      const RopeTable angles = reference_rope_angles(copy, plan, rope);
      for (std::size_t c = 0; c < cells; ++c) {
        const std::size_t t = copy.tokens.begin + c;
        q[t] = rq[c];
        k[t] = rk[c];
        v[t] = rv[c];
        rotate(q[t], angles.angles.row(c));
        rotate(k[t], angles.angles.row(c));
      }
    }
  }

  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<std::vector<T>> attn(n, std::vector<T>(d, T(0)));
  std::vector<T> logits(n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask_rule(layout, i, j)) continue;
        T dot = 0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[i][h * hd + c] * k[j][h * hd + c];
        logits[j] = dot * scale_factor;
        peak = std::max(peak, logits[j]);
      }
      T denom = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (mask_rule(layout, i, j)) denom += std::exp(logits[j] - peak);
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask_rule(layout, i, j)) continue;
        const T p = std::exp(logits[j] - peak) / denom;
        for (std::size_t c = 0; c < hd; ++c) attn[i][h * hd + c] += p * v[j][h * hd + c];
      }
    }
  }

  // Mean over copies, then the output projection.
  InContext<T> out;
  out.video = Tensor<T>({layout.video_tokens, d});
  for (std::size_t t = 0; t < layout.video_tokens; ++t) {
    const auto row = project(attn[t], weights.wo);
    std::copy(row.begin(), row.end(), out.video.row(t).begin());
  }
  for (std::size_t m = 0; m < layout.ref_count(); ++m) {
    const std::size_t cells = layout.ref_grids[m].cells();
    const auto& ids = layout.ref_copies[m];
    Tensor<T> block({cells, d});
    for (std::size_t c = 0; c < cells; ++c) {
      std::vector<T> mean(d, T(0));
      for (std::size_t id : ids) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += attn[layout.copies[id].tokens.begin + c][j];
      }
      for (auto& x : mean) x /= static_cast<T>(ids.size());
      const auto row = project(mean, weights.wo);
      std::copy(row.begin(), row.end(), block.row(c).begin());
    }
    out.refs.push_back(std::move(block));
  }
  return out;
}

AttentionGradients temporal_attention_backward(const AttentionCache<double>& cache,
                                               const InContext<double>& upstream) {
  using T = double;
  const TokenLayout& layout = cache.layout;
  const AttnWeights<T>& w = cache.weights;
  validate_weights(w);
  validate_context(upstream, layout, w.d_model());
  if (cache.expanded.rank() != 2 || cache.expanded.rows() != layout.total ||
      cache.probs.size() != w.heads) {
    throw ShapeError("temporal_attention_backward: cache does not match its layout");
  }
  const std::size_t heads = w.heads;
  const std::size_t hd = w.head_dim();
  const std::size_t d = w.d_model();
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));

  const Tensor<T> g_out = upstream.stacked();
  AttentionGradients grads;
  grads.wo = matmul_tn(cache.aggregated, g_out);
  const Tensor<T> g_agg = matmul_nt(g_out, w.wo);

  // Mean backward: each copy receives 1/N_box of its reference's gradient.
  Tensor<T> g_attn({layout.total, d});
  std::copy_n(g_agg.data().begin(), layout.video_tokens * d, g_attn.data().begin());
  std::size_t row = layout.video_tokens;
  for (std::size_t m = 0; m < layout.ref_count(); ++m) {
    const std::size_t cells = layout.ref_grids[m].cells();
    const auto& ids = layout.ref_copies[m];
    const T inv = T(1) / static_cast<T>(ids.size());
    for (std::size_t id : ids) {
      for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t j = 0; j < d; ++j) {
          g_attn.at(layout.copies[id].tokens.begin + c, j) = g_agg.at(row + c, j) * inv;
        }
      }
    }
    row += cells;
  }

  Tensor<T> g_q({layout.total, d}), g_k({layout.total, d}), g_v({layout.total, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T>& p = cache.probs[h];
    const Tensor<T> qh = head_slice(cache.q, h, hd);
    const Tensor<T> kh = head_slice(cache.k, h, hd);
    const Tensor<T> vh = head_slice(cache.v, h, hd);
    const Tensor<T> g_oh = head_slice(g_attn, h, hd);
    put_head(g_v, matmul_tn(p, g_oh), h);
    const Tensor<T> g_p = matmul_nt(g_oh, vh);
    // Softmax backward; masked entries have p = 0 and stay zero.
    Tensor<T> g_s(p.shape());
    for (std::size_t i = 0; i < p.rows(); ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += p.at(i, j) * g_p.at(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) g_s.at(i, j) = p.at(i, j) * (g_p.at(i, j) - dot);
    }
    put_head(g_q, scale(matmul(g_s, kh), scale_factor), h);
    put_head(g_k, scale(matmul_tn(g_s, qh), scale_factor), h);
  }

  // Rotation backward is rotation by the negated angle.
  const Tensor<T> g_q_raw = rotate_heads(g_q, cache.angles, heads, -1);
  const Tensor<T> g_k_raw = rotate_heads(g_k, cache.angles, heads, -1);
  grads.wq = matmul_tn(cache.expanded, g_q_raw);
  grads.wk = matmul_tn(cache.expanded, g_k_raw);
  grads.wv = matmul_tn(cache.expanded, g_v);
  const Tensor<T> g_x =
      add(add(matmul_nt(g_q_raw, w.wq), matmul_nt(g_k_raw, w.wk)), matmul_nt(g_v, w.wv));

  // Copy backward: sum every copy's gradient into the shared reference block.
  grads.ctx.video = Tensor<T>({layout.video_tokens, d});
  std::copy_n(g_x.data().begin(), layout.video_tokens * d, grads.ctx.video.data().begin());
  for (std::size_t m = 0; m < layout.ref_count(); ++m) {
    Tensor<T> block({layout.ref_grids[m].cells(), d});
    for (std::size_t id : layout.ref_copies[m]) {
      const std::size_t begin = layout.copies[id].tokens.begin;
      for (std::size_t c = 0; c < block.rows(); ++c) {
        for (std::size_t j = 0; j < d; ++j) block.at(c, j) += g_x.at(begin + c, j);
      }
    }
    grads.ctx.refs.push_back(std::move(block));
  }
  return grads;
}

#define MSM_INSTANTIATE_ATTENTION(T)                                                           \
  template void validate_weights(const AttnWeights<T>&);                                       \
  template struct InContext<T>;                                                                \
  template void validate_context(const InContext<T>&, const TokenLayout&, std::size_t);        \
  template Tensor<T> expand_copies(const InContext<T>&, const TokenLayout&);                   \
  template Tensor<T> aggregate_copies(const Tensor<T>&, const TokenLayout&);                   \
  template AttentionResult<T> temporal_attention_forward(const InContext<T>&,                  \
                                                         const TokenLayout&, const ShotPlan&,  \
                                                         const AttnWeights<T>&,                \
                                                         const RopeConfig&, AttentionKernel);  \
  template InContext<T> temporal_attention_naive(const InContext<T>&, const TokenLayout&,      \
                                                 const ShotPlan&, const AttnWeights<T>&,       \
                                                 const RopeConfig&);

MSM_INSTANTIATE_ATTENTION(float)
MSM_INSTANTIATE_ATTENTION(double)

#undef MSM_INSTANTIATE_ATTENTION

}  // namespace msm
