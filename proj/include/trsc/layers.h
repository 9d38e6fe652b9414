#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

#include "trsc/quant.h"
#include "trsc/tensor.h"

namespace trsc {

template <class T>
struct AttentionWeightsT {
  TensorT<T> w_q, w_k, w_v, w_o;  // d_model x d_model each
  TensorT<T> b_q, b_k, b_v, b_o;  // d_model each
};

template <class T>
struct FeedForwardWeightsT {
  TensorT<T> w1;  // d_model x d_ff
  TensorT<T> b1;  // d_ff
  TensorT<T> w2;  // d_ff x d_model
  TensorT<T> b2;  // d_model
};

template <class T>
struct LayerNormParamsT {
  TensorT<T> gamma, beta;  // d_model each
};

// Fused gate weights, rows ordered i, f, g, o.
template <class T>
struct LstmWeightsT {
  TensorT<T> w;  // 4h x (in + h)
  TensorT<T> b;  // 4h
};

using AttentionWeights = AttentionWeightsT<float>;
using FeedForwardWeights = FeedForwardWeightsT<float>;
using LayerNormParams = LayerNormParamsT<float>;
using LstmWeights = LstmWeightsT<float>;

// x * w + b. When qw is given (float only) the matmul runs on the int8 path.
template <class T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                 ThreadPool* pool = nullptr, const QuantizedMatrix* qw = nullptr) {
  TensorT<T> y;
  if constexpr (std::is_same_v<T, float>) {
    if (qw != nullptr) {
      y = qmatmul(x, *qw, pool);
      add_row_vector_inplace(y, b);
      return y;
    }
  }
  y = matmul(x, w, pool);
  add_row_vector_inplace(y, b);
  return y;
}

template <class T>
void sinusoidal_position_add(TensorT<T>& x) {
  const int d = x.shape.back();
  auto [rows, cols] = detail::row_view(x);
  for (size_t t = 0; t < rows; ++t) {
    T* p = x.data.data() + t * static_cast<size_t>(cols);
    for (int i = 0; 2 * i < d; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      const double angle = static_cast<double>(t) * freq;
      p[2 * i] += static_cast<T>(std::sin(angle));
      if (2 * i + 1 < d) p[2 * i + 1] += static_cast<T>(std::cos(angle));
    }
  }
}

// Row t = emb[token_t] * sqrt(d_model) + sinusoidal position t. An empty
// token sequence yields a 0 x d_model tensor.
template <class T>
TensorT<T> embed_and_position(std::span<const int> tokens, const TensorT<T>& emb) {
  detail::require_2d(emb, "embedding table");
  const int vocab = emb.shape[0];
  const int d = emb.shape[1];
  TensorT<T> out = TensorT<T>::zeros({static_cast<int>(tokens.size()), d});
  const T scale = std::sqrt(static_cast<T>(d));
  for (size_t t = 0; t < tokens.size(); ++t) {
    const int id = tokens[t];
    if (id < 0 || id >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " out of vocabulary [0, " +
                       std::to_string(vocab) + ") at position " + std::to_string(t));
    }
    const T* e = emb.row(id);
    T* o = out.row(static_cast<int>(t));
    for (int j = 0; j < d; ++j) o[j] = e[j] * scale;
  }
  sinusoidal_position_add(out);
  return out;
}

// Additive mask builders: 0 keeps a key, -inf removes it. Keys at or beyond
// valid_len (right padding) are always removed.
template <class T>
TensorT<T> causal_mask(int query_len, int key_len, int valid_len) {
  TensorT<T> m = TensorT<T>::zeros({query_len, key_len});
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < query_len; ++i) {
    T* row = m.row(i);
    for (int j = 0; j < key_len; ++j) {
      if (j > i || j >= valid_len) row[j] = neg_inf;
    }
  }
  return m;
}

template <class T>
TensorT<T> full_context_mask(int query_len, int key_len, int valid_len) {
  TensorT<T> m = TensorT<T>::zeros({query_len, key_len});
  const T neg_inf = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < query_len; ++i) {
    T* row = m.row(i);
    for (int j = valid_len; j < key_len; ++j) row[j] = neg_inf;
  }
  return m;
}

// Scaled dot-product attention over already-projected q/k/v (m x d, n x d,
// heads side by side in the feature dim). Returns the concatenated head
// contexts (m x d) before the output projection. probs_out, when non-null,
// receives the softmax weights as [heads, m, n]. Heads are partitioned
// across workers; every output element is owned by exactly one worker.
template <class T>
TensorT<T> attention_context(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                             const TensorT<T>* mask, int heads, ThreadPool* pool = nullptr,
                             TensorT<T>* probs_out = nullptr) {
  const int m = q.shape[0], d = q.shape[1], n = k.shape[0];
  if (d % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d) + " not divisible by head count " +
                      std::to_string(heads));
  }
  if (k.shape != v.shape || k.shape[1] != d) {
    throw DimensionError("attention k/v shape mismatch: " + shape_str(k.shape) + " vs " +
                         shape_str(v.shape));
  }
  if (mask != nullptr && (mask->shape[0] != m || mask->shape[1] != n)) {
    throw DimensionError("attention mask must be " + std::to_string(m) + "x" + std::to_string(n) +
                         ", got " + shape_str(mask->shape));
  }
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  TensorT<T> ctx = TensorT<T>::zeros({m, d});
  if (probs_out != nullptr) *probs_out = TensorT<T>::zeros({heads, m, n});

  parallel_for(pool, static_cast<size_t>(heads), [&](size_t h0, size_t h1) {
    TensorT<T> scores = TensorT<T>::zeros({m, n});
    for (size_t h = h0; h < h1; ++h) {
      const int off = static_cast<int>(h) * dh;
      for (int i = 0; i < m; ++i) {
        const T* qi = q.row(i) + off;
        T* si = scores.row(i);
        for (int j = 0; j < n; ++j) {
          const T* kj = k.row(j) + off;
          T acc = T(0);
          for (int c = 0; c < dh; ++c) acc += qi[c] * kj[c];
          si[j] = acc * scale;
          if (mask != nullptr) si[j] += mask->at(i, j);
        }
      }
      TensorT<T> probs = softmax_rows(scores);
      if (probs_out != nullptr) {
        std::copy(probs.data.begin(), probs.data.end(),
                  probs_out->data.begin() + h * static_cast<size_t>(m) * n);
      }
      for (int i = 0; i < m; ++i) {
        const T* pi = probs.row(i);
        T* ci = ctx.row(i) + off;
        for (int j = 0; j < n; ++j) {
          const T pij = pi[j];
          if (pij == T(0)) continue;
          const T* vj = v.row(j) + off;
          for (int c = 0; c < dh; ++c) ci[c] += pij * vj[c];
        }
      }
    }
  });
  return ctx;
}

// Full multi-head attention block: project, attend, merge heads, project out.
template <class T>
TensorT<T> multi_head_attention(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                                const AttentionWeightsT<T>& w, const TensorT<T>* mask, int heads,
                                ThreadPool* pool = nullptr) {
  TensorT<T> q = dense(q_in, w.w_q, w.b_q, pool);
  TensorT<T> k = dense(kv_in, w.w_k, w.b_k, pool);
  TensorT<T> v = dense(kv_in, w.w_v, w.b_v, pool);
  TensorT<T> ctx = attention_context(q, k, v, mask, heads, pool);
  return dense(ctx, w.w_o, w.b_o, pool);
}

// w2 * relu(w1 * x + b1) + b2.
template <class T>
TensorT<T> feed_forward_block(const TensorT<T>& x, const FeedForwardWeightsT<T>& w,
                              ThreadPool* pool = nullptr) {
  TensorT<T> h = dense(x, w.w1, w.b1, pool);
  for (T& v : h.data) v = v > T(0) ? v : T(0);
  return dense(h, w.w2, w.b2, pool);
}

// ------------------------------------------------------------------
// LSTM cell
// ------------------------------------------------------------------

template <class T>
struct LstmStateT {
  std::vector<T> c, h;
};

// y[r] = sum_k w[r][k] * v[k] + b[r], rows split across workers.
template <class T>
void gemv_rows(const TensorT<T>& w, const T* v, const TensorT<T>& b, T* y,
               ThreadPool* pool = nullptr) {
  const int rows = w.shape[0], k = w.shape[1];
  parallel_for(pool, static_cast<size_t>(rows), [&](size_t r0, size_t r1) {
    for (size_t r = r0; r < r1; ++r) {
      const T* wr = w.row(static_cast<int>(r));
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += wr[p] * v[p];
      y[r] = acc + b.data[r];
    }
  });
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// One recurrence step; gate order i, f, g, o. x has in_dim entries, state
// vectors have h entries; out (h entries) receives the new hidden state.
template <class T>
void lstm_step(const LstmWeightsT<T>& w, const T* x, int in_dim, LstmStateT<T>& state, T* out,
               ThreadPool* pool = nullptr, const QuantizedMatrix* qw = nullptr) {
  const int h = static_cast<int>(state.h.size());
  if (w.w.shape[0] != 4 * h || w.w.shape[1] != in_dim + h) {
    throw DimensionError("lstm weights must be " + std::to_string(4 * h) + "x" +
                         std::to_string(in_dim + h) + ", got " + shape_str(w.w.shape));
  }
  std::vector<T> concat(static_cast<size_t>(in_dim + h));
  std::copy(x, x + in_dim, concat.begin());
  std::copy(state.h.begin(), state.h.end(), concat.begin() + in_dim);
  std::vector<T> z(static_cast<size_t>(4 * h));
  if constexpr (std::is_same_v<T, float>) {
    if (qw != nullptr) {
      qgemv_rows(*qw, concat.data(), w.b, z.data(), pool);
    } else {
      gemv_rows(w.w, concat.data(), w.b, z.data(), pool);
    }
  } else {
    gemv_rows(w.w, concat.data(), w.b, z.data(), pool);
  }
  for (int j = 0; j < h; ++j) {
    const T gi = sigmoid(z[static_cast<size_t>(j)]);
    const T gf = sigmoid(z[static_cast<size_t>(h + j)]);
    const T gg = std::tanh(z[static_cast<size_t>(2 * h + j)]);
    const T go = sigmoid(z[static_cast<size_t>(3 * h + j)]);
    state.c[static_cast<size_t>(j)] = gf * state.c[static_cast<size_t>(j)] + gi * gg;
    state.h[static_cast<size_t>(j)] = go * std::tanh(state.c[static_cast<size_t>(j)]);
    out[j] = state.h[static_cast<size_t>(j)];
  }
}

}  // namespace trsc
