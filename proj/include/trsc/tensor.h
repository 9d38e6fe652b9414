#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "trsc/error.h"
#include "trsc/thread_pool.h"

namespace trsc {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += 'x';
    s += std::to_string(shape[i]);
  }
  s += ']';
  return s;
}

// Dense row-major tensor of rank 1..3, innermost dim contiguous. TensorT<float>
// is the runtime value carrier; TensorT<double> backs the gradient checks.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;

  static TensorT zeros(std::vector<int> s) {
    TensorT t;
    t.shape = std::move(s);
    t.data.assign(t.check_shape(), T(0));
    return t;
  }

  static TensorT from(std::vector<int> s, std::vector<T> d) {
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(d);
    if (t.check_shape() != t.data.size()) {
      throw DimensionError("tensor data size " + std::to_string(t.data.size()) +
                           " does not match shape " + shape_str(t.shape));
    }
    return t;
  }

  size_t check_shape() const {
    if (shape.empty() || shape.size() > 3) {
      throw DimensionError("tensor rank must be 1..3, got shape " + shape_str(shape));
    }
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw DimensionError("negative dim in shape " + shape_str(shape));
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  size_t numel() const { return data.size(); }

  // 2-D accessors.
  int rows() const { return shape[0]; }
  int cols() const { return shape[rank() == 1 ? 0 : 1]; }
  T* row(int i) { return data.data() + static_cast<size_t>(i) * static_cast<size_t>(shape[1]); }
  const T* row(int i) const {
    return data.data() + static_cast<size_t>(i) * static_cast<size_t>(shape[1]);
  }
  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + static_cast<size_t>(j)]; }
  T at(int i, int j) const {
    return data[static_cast<size_t>(i) * shape[1] + static_cast<size_t>(j)];
  }
};

using Tensor = TensorT<float>;

namespace detail {

template <class T>
void require_2d(const TensorT<T>& t, const char* name) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(name) + " must be 2-D, got shape " + shape_str(t.shape));
  }
}

// Innermost-dim view: any rank 1..3 tensor seen as [rows x cols].
template <class T>
std::pair<size_t, int> row_view(const TensorT<T>& t) {
  const int cols = t.shape.back();
  if (cols == 0) return {0, 0};
  return {t.numel() / static_cast<size_t>(cols), cols};
}

}  // namespace detail

// c[i][j] = sum_p a[i][p] * b[p][j], p accumulated in ascending order per
// output element regardless of threading, so results are bit-identical for
// any worker count.
template <class T>
void matmul_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c,
                 ThreadPool* pool = nullptr) {
  detail::require_2d(a, "matmul lhs");
  detail::require_2d(b, "matmul rhs");
  if (a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul inner dims mismatch: " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  c.shape = {m, n};
  c.data.assign(static_cast<size_t>(m) * n, T(0));
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();

  auto rows = [&](size_t i0, size_t i1) {
    size_t i = i0;
    // 4-row jam keeps each b row in cache for four outputs.
    for (; i + 4 <= i1; i += 4) {
      T* c0 = cd + (i + 0) * n;
      T* c1 = cd + (i + 1) * n;
      T* c2 = cd + (i + 2) * n;
      T* c3 = cd + (i + 3) * n;
      const T* a0 = ad + (i + 0) * k;
      const T* a1 = ad + (i + 1) * k;
      const T* a2 = ad + (i + 2) * k;
      const T* a3 = ad + (i + 3) * k;
      for (int p = 0; p < k; ++p) {
        const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        const T* bp = bd + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) {
          c0[j] += x0 * bp[j];
          c1[j] += x1 * bp[j];
          c2[j] += x2 * bp[j];
          c3[j] += x3 * bp[j];
        }
      }
    }
    for (; i < i1; ++i) {
      T* ci = cd + i * n;
      const T* ai = ad + i * k;
      for (int p = 0; p < k; ++p) {
        const T x = ai[p];
        const T* bp = bd + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += x * bp[j];
      }
    }
  };

  if (pool != nullptr && pool->threads() > 1 && m == 1 && n >= 2 * pool->threads()) {
    // Single-row product: split output columns instead.
    pool->parallel_for(static_cast<size_t>(n), [&](size_t j0, size_t j1) {
      for (int p = 0; p < k; ++p) {
        const T x = ad[p];
        const T* bp = bd + static_cast<size_t>(p) * n;
        for (size_t j = j0; j < j1; ++j) cd[j] += x * bp[j];
      }
    });
    return;
  }
  parallel_for(pool, static_cast<size_t>(m), rows);
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, ThreadPool* pool = nullptr) {
  TensorT<T> c;
  matmul_into(a, b, c, pool);
  return c;
}

// c[p][j] = sum_i a[i][p] * b[i][j]  (a^T * b); used for weight gradients.
template <class T>
void matmul_transposed_a_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c,
                              ThreadPool* pool = nullptr) {
  detail::require_2d(a, "matmul_ta lhs");
  detail::require_2d(b, "matmul_ta rhs");
  if (a.shape[0] != b.shape[0]) {
    throw DimensionError("matmul_ta outer dims mismatch: " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  c.shape = {k, n};
  c.data.assign(static_cast<size_t>(k) * n, T(0));
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();
  parallel_for(pool, static_cast<size_t>(k), [&](size_t p0, size_t p1) {
    for (int i = 0; i < m; ++i) {
      const T* bi = bd + static_cast<size_t>(i) * n;
      const T* ai = ad + static_cast<size_t>(i) * k;
      for (size_t p = p0; p < p1; ++p) {
        const T x = ai[p];
        if (x == T(0)) continue;
        T* cp = cd + p * n;
        for (int j = 0; j < n; ++j) cp[j] += x * bi[j];
      }
    }
  });
}

// c[i][p] = sum_j a[i][j] * b[p][j]  (a * b^T); used for input gradients.
template <class T>
void matmul_transposed_b_into(const TensorT<T>& a, const TensorT<T>& b, TensorT<T>& c,
                              ThreadPool* pool = nullptr) {
  detail::require_2d(a, "matmul_tb lhs");
  detail::require_2d(b, "matmul_tb rhs");
  if (a.shape[1] != b.shape[1]) {
    throw DimensionError("matmul_tb inner dims mismatch: " + shape_str(a.shape) + " x " +
                         shape_str(b.shape));
  }
  const int m = a.shape[0], n = a.shape[1], k = b.shape[0];
  c.shape = {m, k};
  c.data.assign(static_cast<size_t>(m) * k, T(0));
  const T* ad = a.data.data();
  const T* bd = b.data.data();
  T* cd = c.data.data();
  parallel_for(pool, static_cast<size_t>(m), [&](size_t i0, size_t i1) {
    for (size_t i = i0; i < i1; ++i) {
      const T* ai = ad + i * n;
      T* ci = cd + i * k;
      for (int p = 0; p < k; ++p) {
        const T* bp = bd + static_cast<size_t>(p) * n;
        T acc = T(0);
        for (int j = 0; j < n; ++j) acc += ai[j] * bp[j];
        ci[p] = acc;
      }
    }
  });
}

// Per innermost row: exp(x - max(x)) normalized to sum 1. -inf entries come
// out as exact zeros, which is how attention masking flows through.
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
  for (T v : x.data) {
    if (std::isnan(v) || (std::isinf(v) && v > T(0))) {
      throw ValueError("softmax_rows input must be finite or -inf");
    }
  }
  TensorT<T> out = x;
  auto [rows, cols] = detail::row_view(out);
  if (cols == 0) return out;
  for (size_t r = 0; r < rows; ++r) {
    T* p = out.data.data() + r * static_cast<size_t>(cols);
    T mx = p[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
    if (std::isinf(mx) && mx < T(0)) {
      // Fully masked row: leave a uniform distribution.
      for (int j = 0; j < cols; ++j) p[j] = T(1) / static_cast<T>(cols);
      continue;
    }
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < cols; ++j) p[j] *= inv;
  }
  return out;
}

// Per row over the innermost dim: (x - mean) / sqrt(var + eps) * gamma + beta,
// population variance.
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-6)) {
  const int d = x.shape.back();
  if (gamma.rank() != 1 || gamma.shape[0] != d || beta.rank() != 1 || beta.shape[0] != d) {
    throw DimensionError("layer_norm params must be length " + std::to_string(d) + ", got " +
                         shape_str(gamma.shape) + " and " + shape_str(beta.shape));
  }
  TensorT<T> out = x;
  auto [rows, cols] = detail::row_view(out);
  for (size_t r = 0; r < rows; ++r) {
    T* p = out.data.data() + r * static_cast<size_t>(cols);
    T mean = T(0);
    for (int j = 0; j < cols; ++j) mean += p[j];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) {
      const T c = p[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(cols);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) {
      p[j] = (p[j] - mean) * inv * gamma.data[static_cast<size_t>(j)] +
             beta.data[static_cast<size_t>(j)];
    }
  }
  return out;
}

template <class T>
void add_row_vector_inplace(TensorT<T>& x, const TensorT<T>& v) {
  const int d = x.shape.back();
  if (v.rank() != 1 || v.shape[0] != d) {
    throw DimensionError("row vector must be length " + std::to_string(d) + ", got " +
                         shape_str(v.shape));
  }
  auto [rows, cols] = detail::row_view(x);
  for (size_t r = 0; r < rows; ++r) {
    T* p = x.data.data() + r * static_cast<size_t>(cols);
    for (int j = 0; j < cols; ++j) p[j] += v.data[static_cast<size_t>(j)];
  }
}

template <class T>
void add_inplace(TensorT<T>& x, const TensorT<T>& y) {
  if (x.shape != y.shape) {
    throw DimensionError("add shape mismatch: " + shape_str(x.shape) + " vs " +
                         shape_str(y.shape));
  }
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] += y.data[i];
}

template <class T>
bool all_finite(const TensorT<T>& x) {
  for (T v : x.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class From, class To>
TensorT<To> tensor_cast(const TensorT<From>& x) {
  TensorT<To> out;
  out.shape = x.shape;
  out.data.resize(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = static_cast<To>(x.data[i]);
  return out;
}

}  // namespace trsc
