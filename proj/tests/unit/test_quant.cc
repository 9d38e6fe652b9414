#include <cstring>

#include "doctest.h"
#include "oracles.h"
#include "trsc/quant.h"

using namespace trsc;
using trsc::testing::frobenius;
using trsc::testing::naive_matmul;
using trsc::testing::random_tensor;

TEST_SUITE_BEGIN("quant");

TEST_CASE("quantize all-zero matrix") {
  QuantizedMatrix q = quantize_dynamic(Tensor::zeros({2, 3}));
  CHECK(q.scale == 1.0f);
  for (int8_t v : q.values) CHECK(v == 0);
}

TEST_CASE("quantize scale formula") {
  QuantizedMatrix q = quantize_dynamic(Tensor::from({1, 2}, {127.0f, -127.0f}));
  CHECK(q.scale == doctest::Approx(1.0f));
  CHECK(q.values[0] == 127);
  CHECK(q.values[1] == -127);
}

TEST_CASE("quantize rounds half away from zero") {
  // scale = 1/127; 0.5 / scale = 63.5 -> 64.
  QuantizedMatrix q = quantize_dynamic(Tensor::from({1, 2}, {1.0f, 0.5f}));
  CHECK(q.scale == doctest::Approx(1.0f / 127.0f));
  CHECK(q.values[0] == 127);
  CHECK(q.values[1] == 64);

  QuantizedMatrix qn = quantize_dynamic(Tensor::from({1, 2}, {1.0f, -0.5f}));
  CHECK(qn.values[1] == -64);
}

TEST_CASE("quantize rejects non-finite input") {
  CHECK_THROWS_AS(quantize_dynamic(Tensor::from({1, 1}, {std::nanf("")})), ValueError);
  CHECK_THROWS_AS(
      quantize_dynamic(Tensor::from({1, 1}, {std::numeric_limits<float>::infinity()})),
      ValueError);
}

TEST_CASE("dequantized values stay within half a step") {
  Rng rng(21);
  Tensor w = random_tensor({8, 8}, rng);
  QuantizedMatrix q = quantize_dynamic(w);
  Tensor back = dequantize(q);
  for (size_t i = 0; i < w.data.size(); ++i) {
    CHECK(std::fabs(back.data[i] - w.data[i]) <= q.scale * 0.5f + 1e-7f);
  }
}

TEST_CASE("qmatmul with identity weights reproduces activations") {
  Rng rng(22);
  const int n = 6;
  Tensor eye = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i) eye.at(i, i) = 1.0f;
  QuantizedMatrix qeye = quantize_dynamic(eye);
  Tensor a = random_tensor({4, n}, rng);
  Tensor c = qmatmul(a, qeye);
  for (int i = 0; i < 4; ++i) {
    float max_abs = 0.0f;
    for (int j = 0; j < n; ++j) max_abs = std::max(max_abs, std::fabs(a.at(i, j)));
    const float row_step = max_abs / 127.0f;  // identity quantizes exactly
    for (int j = 0; j < n; ++j) {
      CHECK(std::fabs(c.at(i, j) - a.at(i, j)) <= 0.5f * row_step + 1e-7f);
    }
  }
}

TEST_CASE("qmatmul of zero activations is exactly zero") {
  Rng rng(23);
  Tensor b = random_tensor({5, 7}, rng);
  Tensor zero = Tensor::zeros({3, 5});
  Tensor c = qmatmul(zero, quantize_dynamic(b));
  for (float v : c.data) CHECK(v == 0.0f);
}

TEST_CASE("qmatmul error vs float matmul stays under 2 percent") {
  Rng rng(24);
  Tensor a = random_tensor({64, 64}, rng);
  Tensor b = random_tensor({64, 64}, rng);
  Tensor exact = naive_matmul(a, b);
  Tensor quant = qmatmul(a, quantize_dynamic(b));
  Tensor diff = exact;
  for (size_t i = 0; i < diff.data.size(); ++i) diff.data[i] -= quant.data[i];
  CHECK(frobenius(diff) / frobenius(exact) <= 0.02);
}

TEST_CASE("qmatmul error shrinks with narrower weight range") {
  // Same weight directions, one version with a rogue large entry that
  // stretches the per-tensor scale.
  Rng rng(25);
  Tensor a = random_tensor({16, 32}, rng);
  Tensor narrow = random_tensor({32, 16}, rng);
  Tensor wide = narrow;
  wide.at(0, 0) = 64.0f;
  Tensor exact_narrow = naive_matmul(a, narrow);
  Tensor exact_wide = naive_matmul(a, wide);
  auto rel_err = [&](const Tensor& exact, const Tensor& approx) {
    Tensor diff = exact;
    for (size_t i = 0; i < diff.data.size(); ++i) diff.data[i] -= approx.data[i];
    return frobenius(diff) / frobenius(exact);
  };
  const double narrow_err = rel_err(exact_narrow, qmatmul(a, quantize_dynamic(narrow)));
  const double wide_err = rel_err(exact_wide, qmatmul(a, quantize_dynamic(wide)));
  CHECK(narrow_err < wide_err);
}

TEST_CASE("qmatmul shape mismatch") {
  Tensor a = Tensor::zeros({2, 3});
  QuantizedMatrix q = quantize_dynamic(Tensor::zeros({4, 2}));
  CHECK_THROWS_AS(qmatmul(a, q), DimensionError);
}

TEST_CASE("qmatmul bit-identical across worker counts") {
  Rng rng(26);
  Tensor a = random_tensor({9, 33}, rng);
  Tensor b = random_tensor({33, 17}, rng);
  QuantizedMatrix qb = quantize_dynamic(b);
  Tensor serial = qmatmul(a, qb);
  ThreadPool pool(3);
  Tensor threaded = qmatmul(a, qb, &pool);
  CHECK(std::memcmp(serial.data.data(), threaded.data.data(),
                    serial.data.size() * sizeof(float)) == 0);
  Tensor row = random_tensor({1, 33}, rng);
  Tensor serial_row = qmatmul(row, qb);
  Tensor threaded_row = qmatmul(row, qb, &pool);
  CHECK(std::memcmp(serial_row.data.data(), threaded_row.data.data(),
                    serial_row.data.size() * sizeof(float)) == 0);
}

TEST_SUITE_END();
