// SPDX-License-Identifier: Apache-2.0
#include "msm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>
#include <vector>

namespace msm {

std::size_t worker_count() {
  if (const char* env = std::getenv("MSM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
    return 1;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

namespace {

void require_matrix(const Shape& s, const char* what) {
  if (s.size() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(s));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul lhs");
  require_matrix(b.shape(), "matmul rhs");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  // i-k-j order keeps the inner loop contiguous in both b and out.
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = &out.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a.at(i, p);
      const T* brow = &b.at(p, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul_nt lhs");
  require_matrix(b.shape(), "matmul_nt rhs");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      out.at(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul_tn lhs");
  require_matrix(b.shape(), "matmul_tn rhs");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: inner extents differ " + shape_str(a.shape()) + "^T * " +
                     shape_str(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const T api = a.at(p, i);
      T* orow = &out.at(i, 0);
      const T* brow = &b.at(p, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += api * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const BoolMask& mask) {
  require_matrix(x.shape(), "masked_softmax_rows");
  if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
    throw ShapeError("masked_softmax_rows: mask " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + " does not match " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto bits = mask.row(r);
    T peak = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (bits[c]) {
        peak = std::max(peak, x.at(r, c));
        any = true;
      }
    }
    if (!any) throw ShapeError("masked_softmax_rows: row " + std::to_string(r) + " is fully masked");
    T denom = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (bits[c]) {
        const T e = std::exp(x.at(r, c) - peak);
        out.at(r, c) = e;
        denom += e;
      }
    }
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) /= denom;
  }
  return out;
}

template <typename T>
Tensor<T> rotate_pairs(const Tensor<T>& x, const Tensor<double>& angles) {
  const std::size_t d = x.inner();
  if (d % 2 != 0) throw ShapeError("rotate_pairs: last extent " + std::to_string(d) + " is odd");
  const std::size_t pairs = d / 2;
  if (angles.inner() != pairs) {
    throw ShapeError("rotate_pairs: angles last extent " + std::to_string(angles.inner()) +
                     " != " + std::to_string(pairs));
  }
  const std::size_t rows = x.outer();
  const std::size_t angle_rows = angles.outer();
  if (angle_rows != 1 && angle_rows != rows) {
    throw ShapeError("rotate_pairs: angles " + shape_str(angles.shape()) +
                     " do not broadcast over " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* theta = &angles[(angle_rows == 1 ? 0 : r) * pairs];
    for (std::size_t p = 0; p < pairs; ++p) {
      const T c = static_cast<T>(std::cos(theta[p]));
      const T s = static_cast<T>(std::sin(theta[p]));
      const T a = x[r * d + 2 * p];
      const T b = x[r * d + 2 * p + 1];
      out[r * d + 2 * p] = a * c - b * s;
      out[r * d + 2 * p + 1] = a * s + b * c;
    }
  }
  return out;
}

template <typename T>
Tensor<T> rotate_heads(const Tensor<T>& x, const Tensor<double>& angles, std::size_t heads,
                       int sign) {
  require_matrix(x.shape(), "rotate_heads");
  require_matrix(angles.shape(), "rotate_heads angles");
  if (heads == 0 || x.cols() % heads != 0) {
    throw ShapeError("rotate_heads: width " + std::to_string(x.cols()) +
                     " not divisible into " + std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = x.cols() / heads;
  if (head_dim % 2 != 0) throw ShapeError("rotate_heads: head dimension is odd");
  const std::size_t pairs = head_dim / 2;
  if (angles.rows() != x.rows() || angles.cols() != pairs) {
    throw ShapeError("rotate_heads: angles " + shape_str(angles.shape()) + " vs tokens " +
                     std::to_string(x.rows()) + " with " + std::to_string(pairs) + " pairs");
  }
  const double dir = sign < 0 ? -1.0 : 1.0;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t p = 0; p < pairs; ++p) {
      const double theta = dir * angles.at(r, p);
      const T c = static_cast<T>(std::cos(theta));
      const T s = static_cast<T>(std::sin(theta));
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t col = h * head_dim + 2 * p;
        const T a = x.at(r, col);
        const T b = x.at(r, col + 1);
        out.at(r, col) = a * c - b * s;
        out.at(r, col + 1) = a * s + b * c;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> vstack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("vstack: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p.shape(), "vstack");
    if (p.cols() != cols) throw ShapeError("vstack: column counts differ");
    rows += p.rows();
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.size();
  }
  return out;
}

template <typename T>
double frobenius_norm(const Tensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double ref = 0;
  for (T v : b.data()) ref = std::max(ref, std::abs(static_cast<double>(v)));
  return max_abs_diff(a, b) / std::max(ref, std::numeric_limits<double>::min());
}

#define MSM_INSTANTIATE_NUMERICS(T)                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> masked_softmax_rows(const Tensor<T>&, const BoolMask&);               \
  template Tensor<T> rotate_pairs(const Tensor<T>&, const Tensor<double>&);                \
  template Tensor<T> rotate_heads(const Tensor<T>&, const Tensor<double>&, std::size_t, int); \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale(const Tensor<T>&, T);                                           \
  template Tensor<T> vstack(std::span<const Tensor<T>>);                                   \
  template double frobenius_norm(const Tensor<T>&);                                        \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);                        \
  template double max_rel_diff(const Tensor<T>&, const Tensor<T>&);

MSM_INSTANTIATE_NUMERICS(float)
MSM_INSTANTIATE_NUMERICS(double)

#undef MSM_INSTANTIATE_NUMERICS

}  // namespace msm
