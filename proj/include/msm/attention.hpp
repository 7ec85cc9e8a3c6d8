// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "msm/layout.hpp"
#include "msm/rope.hpp"
#include "msm/tensor.hpp"

namespace msm {

// Projection weights of the temporal attention. Row convention: a token row
// z maps to z * W.
template <typename T>
struct AttnWeights {
  Tensor<T> wq, wk, wv, wo;  // each [D x D]
  std::size_t heads = 1;

  std::size_t d_model() const { return wq.rows(); }
  std::size_t head_dim() const { return d_model() / heads; }
};

template <typename T>
void validate_weights(const AttnWeights<T>& w);

// In-context latents: video tokens plus one un-copied block per reference.
template <typename T>
struct InContext {
  Tensor<T> video;              // [N_video x D]
  std::vector<Tensor<T>> refs;  // [H_ref * W_ref x D] per reference

  // [video; refs...] stacked along rows.
  Tensor<T> stacked() const;
};

template <typename T>
void validate_context(const InContext<T>& ctx, const TokenLayout& layout, std::size_t d_model);

// Video rows verbatim, then one duplicate of the owning reference block per copy.
template <typename T>
Tensor<T> expand_copies(const InContext<T>& ctx, const TokenLayout& layout);

// Video rows pass through; each reference block becomes the element-wise
// mean of its copies. Output is [N_video + N_ref_tokens x D].
template <typename T>
Tensor<T> aggregate_copies(const Tensor<T>& attn_out, const TokenLayout& layout);

enum class AttentionKernel {
  block_sparse,  // visits only the key ranges allowed by the mask blocks
  dense,         // full logits, dense mask, masked softmax
};

// Intermediates kept by the forward pass for the analytic backward pass.
template <typename T>
struct AttentionCache {
  TokenLayout layout;
  AttnWeights<T> weights;
  Tensor<double> angles;       // [total x head_dim/2]
  Tensor<T> expanded;          // X, [total x D]
  Tensor<T> q, k, v;           // rotated Q, K and raw V, [total x D]
  std::vector<Tensor<T>> probs;  // per head, [total x total], zero where masked
  Tensor<T> attn;              // per-token head outputs, [total x D]
  Tensor<T> aggregated;        // [N_video + N_ref_tokens x D]
};

template <typename T>
struct AttentionResult {
  InContext<T> output;
  AttentionCache<T> cache;
};

// Temporal attention over video tokens and grounded reference copies:
// project, rotate video Q/K with narrative angles and copy Q/K with
// box-sampled angles, masked multi-head softmax attention scaled by
// 1/sqrt(head_dim), mean-aggregate copies per reference, output projection.
template <typename T>
AttentionResult<T> temporal_attention_forward(const InContext<T>& ctx, const TokenLayout& layout,
                                              const ShotPlan& plan, const AttnWeights<T>& weights,
                                              const RopeConfig& rope,
                                              AttentionKernel kernel = AttentionKernel::block_sparse);

// Token-by-token transcription of the same computation with sequential sums:
// each reference is projected once and its Q/K/V copied per box.
template <typename T>
InContext<T> temporal_attention_naive(const InContext<T>& ctx, const TokenLayout& layout,
                                      const ShotPlan& plan, const AttnWeights<T>& weights,
                                      const RopeConfig& rope);

struct AttentionGradients {
  InContext<double> ctx;
  Tensor<double> wq, wk, wv, wo;
};

// Gradients of sum(upstream * output) with respect to the inputs and weights.
AttentionGradients temporal_attention_backward(const AttentionCache<double>& cache,
                                               const InContext<double>& upstream);

}  // namespace msm
