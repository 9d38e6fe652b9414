#include "trsc/quant.h"

#include <cmath>
#include <cstdlib>

#include "trsc/error.h"

namespace trsc {

namespace {

inline int8_t quantize_value(double v, double inv_scale) {
  long q = std::lround(v * inv_scale);  // lround = round half away from zero
  if (q > 127) q = 127;
  if (q < -127) q = -127;
  return static_cast<int8_t>(q);
}

}  // namespace

QuantizedMatrix quantize_dynamic(const Tensor& w) {
  detail::require_2d(w, "quantize_dynamic input");
  if (w.numel() == 0) throw DimensionError("quantize_dynamic input is empty");
  float max_abs = 0.0f;
  for (float v : w.data) {
    if (!std::isfinite(v)) throw ValueError("quantize_dynamic input must be finite");
    max_abs = std::max(max_abs, std::fabs(v));
  }
  QuantizedMatrix q;
  q.shape = w.shape;
  q.scale = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  q.values.resize(w.numel());
  const double inv_scale = 1.0 / static_cast<double>(q.scale);
  for (size_t i = 0; i < w.data.size(); ++i) {
    q.values[i] = quantize_value(static_cast<double>(w.data[i]), inv_scale);
  }
  return q;
}

Tensor dequantize(const QuantizedMatrix& q) {
  Tensor t = Tensor::zeros(q.shape);
  for (size_t i = 0; i < q.values.size(); ++i) {
    t.data[i] = static_cast<float>(q.values[i]) * q.scale;
  }
  return t;
}

Tensor qmatmul(const Tensor& a, const QuantizedMatrix& qb, ThreadPool* pool) {
  detail::require_2d(a, "qmatmul lhs");
  if (qb.shape.size() != 2) throw DimensionError("qmatmul rhs must be 2-D");
  if (a.shape[1] != qb.shape[0]) {
    throw DimensionError("qmatmul inner dims mismatch: " + shape_str(a.shape) + " x " +
                         shape_str(qb.shape));
  }
  const int m = a.shape[0], k = a.shape[1], n = qb.shape[1];
  Tensor c = Tensor::zeros({m, n});
  const int8_t* bd = qb.values.data();
  const float scale_b = qb.scale;

  // Per-row activation quantization staging. One int8 row + one int32
  // accumulator row per in-flight output row.
  auto run_rows = [&](size_t i0, size_t i1) {
    std::vector<int8_t> a8(static_cast<size_t>(k));
    std::vector<int32_t> acc(static_cast<size_t>(n));
    for (size_t i = i0; i < i1; ++i) {
      const float* ai = a.row(static_cast<int>(i));
      float max_abs = 0.0f;
      for (int p = 0; p < k; ++p) max_abs = std::max(max_abs, std::fabs(ai[p]));
      const float scale_a = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
      const float inv_scale_a = 1.0f / scale_a;
      for (int p = 0; p < k; ++p) {
        long q = std::lround(ai[p] * inv_scale_a);
        if (q > 127) q = 127;
        if (q < -127) q = -127;
        a8[static_cast<size_t>(p)] = static_cast<int8_t>(q);
      }
      std::fill(acc.begin(), acc.end(), 0);
      for (int p = 0; p < k; ++p) {
        const int32_t x = a8[static_cast<size_t>(p)];
        if (x == 0) continue;
        const int8_t* bp = bd + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += x * bp[j];
      }
      const float rescale = scale_a * scale_b;
      float* ci = c.row(static_cast<int>(i));
      for (int j = 0; j < n; ++j) ci[j] = static_cast<float>(acc[static_cast<size_t>(j)]) * rescale;
    }
  };

  if (pool != nullptr && pool->threads() > 1 && m == 1 && n >= 2 * pool->threads()) {
    // Single-row product: quantize the row once, split output columns.
    const float* ai = a.row(0);
    float max_abs = 0.0f;
    for (int p = 0; p < k; ++p) max_abs = std::max(max_abs, std::fabs(ai[p]));
    const float scale_a = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
    const float inv_scale_a = 1.0f / scale_a;
    std::vector<int8_t> a8(static_cast<size_t>(k));
    for (int p = 0; p < k; ++p) {
      long q = std::lround(ai[p] * inv_scale_a);
      if (q > 127) q = 127;
      if (q < -127) q = -127;
      a8[static_cast<size_t>(p)] = static_cast<int8_t>(q);
    }
    const float rescale = scale_a * scale_b;
    float* ci = c.row(0);
    pool->parallel_for(static_cast<size_t>(n), [&](size_t j0, size_t j1) {
      for (size_t j = j0; j < j1; ++j) {
        int32_t acc = 0;
        const int8_t* bp = bd;
        // Column walk: strided over b, contiguous over a8.
        for (int p = 0; p < k; ++p, bp += n) acc += static_cast<int32_t>(a8[static_cast<size_t>(p)]) * bp[j];
        ci[j] = static_cast<float>(acc) * rescale;
      }
    });
    return c;
  }
  parallel_for(pool, static_cast<size_t>(m), run_rows);
  return c;
}

void qgemv_rows(const QuantizedMatrix& qw, const float* v, const Tensor& b, float* y,
                ThreadPool* pool) {
  const int rows = qw.shape[0], k = qw.shape[1];
  float max_abs = 0.0f;
  for (int p = 0; p < k; ++p) max_abs = std::max(max_abs, std::fabs(v[p]));
  const float scale_v = max_abs > 0.0f ? max_abs / 127.0f : 1.0f;
  const float inv_scale_v = 1.0f / scale_v;
  std::vector<int8_t> v8(static_cast<size_t>(k));
  for (int p = 0; p < k; ++p) {
    long q = std::lround(v[p] * inv_scale_v);
    if (q > 127) q = 127;
    if (q < -127) q = -127;
    v8[static_cast<size_t>(p)] = static_cast<int8_t>(q);
  }
  const float rescale = scale_v * qw.scale;
  parallel_for(pool, static_cast<size_t>(rows), [&](size_t r0, size_t r1) {
    for (size_t r = r0; r < r1; ++r) {
      const int8_t* wr = qw.values.data() + r * static_cast<size_t>(k);
      int32_t acc = 0;
      for (int p = 0; p < k; ++p) acc += static_cast<int32_t>(wr[p]) * v8[static_cast<size_t>(p)];
      y[r] = static_cast<float>(acc) * rescale + b.data[r];
    }
  });
}

}  // namespace trsc
