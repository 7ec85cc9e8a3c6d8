// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

#include "msm/tensor.hpp"

namespace msm {

// Number of worker threads for internal data parallelism. Reads MSM_THREADS
// (values < 1 or unparsable fall back to 1); defaults to hardware concurrency.
std::size_t worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
// visited exactly once; callers must write to disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// a[M x K] * b[K x N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a[M x K] * b[N x K]^T.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// a[K x M]^T * b[K x N].
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// Row-wise softmax over unmasked entries with max subtraction. Masked entries
// are exactly zero. A row with no unmasked entry throws ShapeError.
template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const BoolMask& mask);

// Rotates consecutive pairs (x[2p], x[2p+1]) of the last axis by angles[p].
// `angles` has last extent D/2 and either one row (broadcast) or one row per
// leading index of x.
template <typename T>
Tensor<T> rotate_pairs(const Tensor<T>& x, const Tensor<double>& angles);

// Multi-head variant: x is [N x heads*2P], angles is [N x P]; the same angle
// row is applied to every head slice of a token. A negative `sign` applies the
// inverse rotation.
template <typename T>
Tensor<T> rotate_heads(const Tensor<T>& x, const Tensor<double>& angles, std::size_t heads,
                       int sign = 1);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);

// Concatenates rank-2 tensors with equal column counts along rows.
template <typename T>
Tensor<T> vstack(std::span<const Tensor<T>> parts);

template <typename T>
double frobenius_norm(const Tensor<T>& a);

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// max|a - b| / max(max|b|, tiny): a scale-aware error used by oracle checks.
template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace msm
