#pragma once

#include <cstdint>
#include <vector>

#include "trsc/tensor.h"

namespace trsc {

// Symmetric per-tensor int8 weights: dequantized value is values[i] * scale,
// zero-point 0. Produced by post-training dynamic range quantization.
struct QuantizedMatrix {
  std::vector<int> shape;  // 2-D
  std::vector<int8_t> values;
  float scale = 1.0f;

  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
};

// scale = max|w| / 127 (1.0 for an all-zero matrix); values rounded
// half-away-from-zero and clamped to [-127, 127].
QuantizedMatrix quantize_dynamic(const Tensor& w);

Tensor dequantize(const QuantizedMatrix& q);

// a (float, m x k) times int8 weights (k x n). Activations are quantized per
// row with scale max|row|/127, products accumulate in int32 in ascending-k
// order, and the result is rescaled by scale_a_row * scale_b. Bit-identical
// for any worker count.
Tensor qmatmul(const Tensor& a, const QuantizedMatrix& qb, ThreadPool* pool = nullptr);

// y[r] = (sum_k qw[r][k] * quant(v)[k]) * rescale + b[r]; the int8 analog of
// a weight-rows-by-vector product, used by the LSTM path.
void qgemv_rows(const QuantizedMatrix& qw, const float* v, const Tensor& b, float* y,
                ThreadPool* pool = nullptr);

}  // namespace trsc
