#pragma once

#include <optional>
#include <vector>

#include "trsc/model.h"

namespace trsc {

// Right-padded batch of token id sequences. seq_len counts positions
// (including the SOS slot), lengths give the valid prefix per sequence.
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> ids;      // batch x seq_len, row-major, pad-id filled
  std::vector<int> lengths;  // valid positions per sequence

  int id_at(int item, int pos) const {
    return ids[static_cast<size_t>(item) * seq_len + static_cast<size_t>(pos)];
  }
};

template <class T>
struct LayerNormCache {
  TensorT<T> xhat;         // (x - mean) * inv_std, before gamma/beta
  std::vector<T> inv_std;  // per row
};

template <class T>
struct TransformerLayerCache {
  TensorT<T> x0;  // sublayer input            [B*s, d]
  TensorT<T> self_q, self_k, self_v;
  std::vector<TensorT<T>> self_probs;  // per item: [heads, s, s]
  TensorT<T> self_ctx;                 // concatenated heads, pre-output-projection
  LayerNormCache<T> ln_self;
  TensorT<T> x1;  // after self sublayer norm

  bool has_cross = false;
  TensorT<T> cross_q;
  TensorT<T> cross_k, cross_v;          // [T, d], shared across items
  std::vector<TensorT<T>> cross_probs;  // per item: [heads, s, T]
  TensorT<T> cross_ctx;
  LayerNormCache<T> ln_cross;
  TensorT<T> x2;  // after cross sublayer norm (== x1 on self-decoder layers)

  TensorT<T> ffn_pre;  // [B*s, d_ff], before ReLU
  LayerNormCache<T> ln_ffn;
};

template <class T>
struct TransformerCache {
  TokenBatch batch;
  TensorT<T> embedded;  // [B*s, d]
  std::vector<TransformerLayerCache<T>> layers;
  TensorT<T> final_hidden;  // [B*s, d], input to the output projection
};

namespace detail {

template <class T>
TensorT<T> extract_rows(const TensorT<T>& x, int begin, int count) {
  TensorT<T> out = TensorT<T>::zeros({count, x.shape[1]});
  std::copy(x.data.begin() + static_cast<size_t>(begin) * x.shape[1],
            x.data.begin() + static_cast<size_t>(begin + count) * x.shape[1], out.data.begin());
  return out;
}

template <class T>
void insert_rows(TensorT<T>& dst, const TensorT<T>& block, int begin) {
  std::copy(block.data.begin(), block.data.end(),
            dst.data.begin() + static_cast<size_t>(begin) * dst.shape[1]);
}

template <class T>
void add_rows(TensorT<T>& dst, const TensorT<T>& block, int begin) {
  T* out = dst.data.data() + static_cast<size_t>(begin) * dst.shape[1];
  for (size_t i = 0; i < block.data.size(); ++i) out[i] += block.data[i];
}

template <class T>
void add_column_sums(const TensorT<T>& x, TensorT<T>& out) {
  auto [rows, cols] = row_view(x);
  for (size_t r = 0; r < rows; ++r) {
    const T* p = x.data.data() + r * static_cast<size_t>(cols);
    for (int j = 0; j < cols; ++j) out.data[static_cast<size_t>(j)] += p[j];
  }
}

}  // namespace detail

template <class T>
TensorT<T> layer_norm_forward(const TensorT<T>& x, const LayerNormParamsT<T>& params, T eps,
                              LayerNormCache<T>* cache) {
  const int d = x.shape.back();
  auto [rows, cols] = detail::row_view(x);
  TensorT<T> out = x;
  if (cache != nullptr) {
    cache->xhat = TensorT<T>::zeros(x.shape);
    cache->inv_std.assign(rows, T(0));
  }
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
      const T xh = (p[j] - mean) * inv;
      if (cache != nullptr) cache->xhat.data[r * static_cast<size_t>(cols) + j] = xh;
      p[j] = xh * params.gamma.data[static_cast<size_t>(j)] +
             params.beta.data[static_cast<size_t>(j)];
    }
    if (cache != nullptr) cache->inv_std[r] = inv;
  }
  (void)d;
  return out;
}

template <class T>
TensorT<T> layer_norm_backward(const TensorT<T>& dy, const LayerNormCache<T>& cache,
                               const LayerNormParamsT<T>& params, TensorT<T>& dgamma,
                               TensorT<T>& dbeta) {
  auto [rows, cols] = detail::row_view(dy);
  TensorT<T> dx = TensorT<T>::zeros(dy.shape);
  for (size_t r = 0; r < rows; ++r) {
    const T* dyr = dy.data.data() + r * static_cast<size_t>(cols);
    const T* xh = cache.xhat.data.data() + r * static_cast<size_t>(cols);
    T* dxr = dx.data.data() + r * static_cast<size_t>(cols);
    T mean_g = T(0), mean_gx = T(0);
    for (int j = 0; j < cols; ++j) {
      const T g = dyr[j] * params.gamma.data[static_cast<size_t>(j)];
      mean_g += g;
      mean_gx += g * xh[j];
      dgamma.data[static_cast<size_t>(j)] += dyr[j] * xh[j];
      dbeta.data[static_cast<size_t>(j)] += dyr[j];
    }
    mean_g /= static_cast<T>(cols);
    mean_gx /= static_cast<T>(cols);
    const T inv = cache.inv_std[r];
    for (int j = 0; j < cols; ++j) {
      const T g = dyr[j] * params.gamma.data[static_cast<size_t>(j)];
      dxr[j] = inv * (g - mean_g - xh[j] * mean_gx);
    }
  }
  return dx;
}

// Backward of attention_context for one item block. probs is [heads, m, n];
// dq is overwritten, dk/dv are accumulated (cross-attention shares k/v
// across batch items).
template <class T>
void attention_context_backward(const TensorT<T>& dctx, const TensorT<T>& probs,
                                const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                int heads, TensorT<T>& dq, TensorT<T>& dk, TensorT<T>& dv) {
  const int m = q.shape[0], d = q.shape[1], n = k.shape[0];
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> dp(static_cast<size_t>(n));
  std::vector<T> ds(static_cast<size_t>(n));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    const T* ph = probs.data.data() + static_cast<size_t>(h) * m * n;
    for (int i = 0; i < m; ++i) {
      const T* pi = ph + static_cast<size_t>(i) * n;
      const T* dci = dctx.row(i) + off;
      // dP = dctx_h * V_h^T ; dV += P^T * dctx_h
      for (int j = 0; j < n; ++j) {
        const T* vj = v.row(j) + off;
        T acc = T(0);
        for (int c = 0; c < dh; ++c) acc += dci[c] * vj[c];
        dp[static_cast<size_t>(j)] = acc;
        const T pij = pi[j];
        if (pij != T(0)) {
          T* dvj = dv.row(j) + off;
          for (int c = 0; c < dh; ++c) dvj[c] += pij * dci[c];
        }
      }
      // softmax backward
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += dp[static_cast<size_t>(j)] * pi[j];
      for (int j = 0; j < n; ++j) {
        ds[static_cast<size_t>(j)] = pi[j] * (dp[static_cast<size_t>(j)] - dot);
      }
      // dQ += scale * dS * K_h ; dK += scale * dS^T * Q_h
      T* dqi = dq.row(i) + off;
      const T* qi = q.row(i) + off;
      for (int j = 0; j < n; ++j) {
        const T dsj = ds[static_cast<size_t>(j)] * scale;
        if (dsj == T(0)) continue;
        const T* kj = k.row(j) + off;
        T* dkj = dk.row(j) + off;
        for (int c = 0; c < dh; ++c) {
          dqi[c] += dsj * kj[c];
          dkj[c] += dsj * qi[c];
        }
      }
    }
  }
}

// Batched forward over all hypotheses in a single pass: every dense
// projection runs once on the stacked [batch*seq_len, d] matrix and
// attention runs per (item, head) tile. Returns logits [batch*seq_len, V].
template <class T>
TensorT<T> transformer_forward(const RescorerConfig& cfg, const ModelWeightsT<T>& w,
                               const TensorT<T>& enc, const TokenBatch& batch,
                               ThreadPool* pool = nullptr,
                               const QuantModelWeights* quant = nullptr,
                               TransformerCache<T>* cache = nullptr) {
  const int b = batch.batch, s = batch.seq_len, d = cfg.d_model;
  const int heads = cfg.num_heads;
  if (s > cfg.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
  }
  if (enc.rank() != 2 || enc.shape[1] != d) {
    throw DimensionError("encoder output must be [T x " + std::to_string(d) + "], got " +
                         shape_str(enc.shape));
  }
  if (static_cast<int>(batch.lengths.size()) != b ||
      static_cast<int>(batch.ids.size()) != b * s) {
    throw DimensionError("token batch fields inconsistent");
  }

  if (cache != nullptr) {
    cache->batch = batch;
    cache->layers.assign(static_cast<size_t>(cfg.num_layers), {});
  }

  // Embedding + positions, stacked.
  TensorT<T> x = TensorT<T>::zeros({b * s, d});
  for (int i = 0; i < b; ++i) {
    std::span<const int> row(batch.ids.data() + static_cast<size_t>(i) * s,
                             static_cast<size_t>(s));
    TensorT<T> e = embed_and_position(row, w.token_embedding);
    detail::insert_rows(x, e, i * s);
  }
  if (cache != nullptr) cache->embedded = x;

  const T eps = T(1e-6);
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& lw = w.layers[static_cast<size_t>(l)];
    const QuantLayerWeights* ql =
        quant != nullptr ? &quant->layers[static_cast<size_t>(l)] : nullptr;
    TransformerLayerCache<T>* lc = cache != nullptr ? &cache->layers[static_cast<size_t>(l)] : nullptr;
    if (lc != nullptr) lc->x0 = x;

    // ---- self-attention sublayer ----
    TensorT<T> q = dense(x, lw.self_attn.w_q, lw.self_attn.b_q, pool,
                         ql != nullptr ? &ql->self_attn.w_q : nullptr);
    TensorT<T> k = dense(x, lw.self_attn.w_k, lw.self_attn.b_k, pool,
                         ql != nullptr ? &ql->self_attn.w_k : nullptr);
    TensorT<T> v = dense(x, lw.self_attn.w_v, lw.self_attn.b_v, pool,
                         ql != nullptr ? &ql->self_attn.w_v : nullptr);
    TensorT<T> ctx = TensorT<T>::zeros({b * s, d});
    std::vector<TensorT<T>> probs_store;
    if (lc != nullptr) probs_store.resize(static_cast<size_t>(b));
    parallel_for(pool, static_cast<size_t>(b), [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) {
        const int begin = static_cast<int>(i) * s;
        TensorT<T> qi = detail::extract_rows(q, begin, s);
        TensorT<T> ki = detail::extract_rows(k, begin, s);
        TensorT<T> vi = detail::extract_rows(v, begin, s);
        TensorT<T> mask =
            cfg.self_attention_mode == SelfAttentionMode::kCausal
                ? causal_mask<T>(s, s, batch.lengths[i])
                : full_context_mask<T>(s, s, batch.lengths[i]);
        TensorT<T>* probs_out = lc != nullptr ? &probs_store[i] : nullptr;
        TensorT<T> ci = attention_context(qi, ki, vi, &mask, heads, nullptr, probs_out);
        detail::insert_rows(ctx, ci, begin);
      }
    });
    TensorT<T> attn_out = dense(ctx, lw.self_attn.w_o, lw.self_attn.b_o, pool,
                                ql != nullptr ? &ql->self_attn.w_o : nullptr);
    add_inplace(attn_out, x);
    if (lc != nullptr) {
      lc->self_q = std::move(q);
      lc->self_k = std::move(k);
      lc->self_v = std::move(v);
      lc->self_probs = std::move(probs_store);
      lc->self_ctx = std::move(ctx);
    }
    x = layer_norm_forward(attn_out, lw.ln_self, eps, lc != nullptr ? &lc->ln_self : nullptr);
    if (lc != nullptr) lc->x1 = x;

    // ---- cross-attention sublayer ----
    if (cfg.has_cross_attention(l + 1)) {
      const auto& cw = *lw.cross_attn;
      TensorT<T> kc = dense(enc, cw.w_k, cw.b_k, pool,
                            ql != nullptr ? &ql->cross_attn->w_k : nullptr);
      TensorT<T> vc = dense(enc, cw.w_v, cw.b_v, pool,
                            ql != nullptr ? &ql->cross_attn->w_v : nullptr);
      TensorT<T> qc = dense(x, cw.w_q, cw.b_q, pool,
                            ql != nullptr ? &ql->cross_attn->w_q : nullptr);
      TensorT<T> ctxc = TensorT<T>::zeros({b * s, d});
      std::vector<TensorT<T>> probs_store_c;
      if (lc != nullptr) probs_store_c.resize(static_cast<size_t>(b));
      parallel_for(pool, static_cast<size_t>(b), [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
          const int begin = static_cast<int>(i) * s;
          TensorT<T> qi = detail::extract_rows(qc, begin, s);
          TensorT<T>* probs_out = lc != nullptr ? &probs_store_c[i] : nullptr;
          TensorT<T> ci = attention_context(qi, kc, vc, static_cast<const TensorT<T>*>(nullptr),
                                            heads, nullptr, probs_out);
          detail::insert_rows(ctxc, ci, begin);
        }
      });
      TensorT<T> cross_out = dense(ctxc, cw.w_o, cw.b_o, pool,
                                   ql != nullptr ? &ql->cross_attn->w_o : nullptr);
      add_inplace(cross_out, x);
      if (lc != nullptr) {
        lc->has_cross = true;
        lc->cross_q = std::move(qc);
        lc->cross_k = std::move(kc);
        lc->cross_v = std::move(vc);
        lc->cross_probs = std::move(probs_store_c);
        lc->cross_ctx = std::move(ctxc);
      }
      x = layer_norm_forward(cross_out, *lw.ln_cross, eps,
                             lc != nullptr ? &lc->ln_cross : nullptr);
    }
    if (lc != nullptr) lc->x2 = x;

    // ---- feed-forward sublayer ----
    TensorT<T> pre = dense(x, lw.ffn.w1, lw.ffn.b1, pool, ql != nullptr ? &ql->ffn_w1 : nullptr);
    if (lc != nullptr) lc->ffn_pre = pre;
    for (T& h : pre.data) h = h > T(0) ? h : T(0);
    TensorT<T> ffn_out = dense(pre, lw.ffn.w2, lw.ffn.b2, pool,
                               ql != nullptr ? &ql->ffn_w2 : nullptr);
    add_inplace(ffn_out, x);
    x = layer_norm_forward(ffn_out, lw.ln_ffn, eps, lc != nullptr ? &lc->ln_ffn : nullptr);
  }

  if (cache != nullptr) cache->final_hidden = x;
  return dense(x, w.output_proj_w, w.output_proj_b, pool,
               quant != nullptr ? &quant->output_proj_w : nullptr);
}

// Full backward pass. grads must be zero-initialized at config shapes
// (accumulated into); denc, when non-null, must be zeros [T x d] and
// receives the gradient w.r.t. the encoder output e.
template <class T>
void transformer_backward(const RescorerConfig& cfg, const ModelWeightsT<T>& w,
                          const TensorT<T>& enc, const TransformerCache<T>& cache,
                          const TensorT<T>& dlogits, ModelWeightsT<T>* grads,
                          TensorT<T>* denc) {
  const int b = cache.batch.batch, s = cache.batch.seq_len, d = cfg.d_model;
  const int heads = cfg.num_heads;

  // Output projection.
  TensorT<T> dW, dx;
  matmul_transposed_a_into(cache.final_hidden, dlogits, dW);
  add_inplace(grads->output_proj_w, dW);
  detail::add_column_sums(dlogits, grads->output_proj_b);
  matmul_transposed_b_into(dlogits, w.output_proj_w, dx);

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& lw = w.layers[static_cast<size_t>(l)];
    const auto& lc = cache.layers[static_cast<size_t>(l)];
    auto& lg = grads->layers[static_cast<size_t>(l)];

    // ---- feed-forward sublayer ----
    TensorT<T> dr3 = layer_norm_backward(dx, lc.ln_ffn, lw.ln_ffn, lg.ln_ffn.gamma,
                                         lg.ln_ffn.beta);
    TensorT<T> dx2 = dr3;  // residual skip
    {
      TensorT<T> h = lc.ffn_pre;
      for (T& x : h.data) x = x > T(0) ? x : T(0);
      TensorT<T> dW2;
      matmul_transposed_a_into(h, dr3, dW2);
      add_inplace(lg.ffn.w2, dW2);
      detail::add_column_sums(dr3, lg.ffn.b2);
      TensorT<T> dh;
      matmul_transposed_b_into(dr3, lw.ffn.w2, dh);
      for (size_t i = 0; i < dh.data.size(); ++i) {
        if (lc.ffn_pre.data[i] <= T(0)) dh.data[i] = T(0);
      }
      TensorT<T> dW1;
      matmul_transposed_a_into(lc.x2, dh, dW1);
      add_inplace(lg.ffn.w1, dW1);
      detail::add_column_sums(dh, lg.ffn.b1);
      TensorT<T> dxin;
      matmul_transposed_b_into(dh, lw.ffn.w1, dxin);
      add_inplace(dx2, dxin);
    }

    // ---- cross-attention sublayer ----
    TensorT<T> dx1;
    if (lc.has_cross) {
      const auto& cw = *lw.cross_attn;
      auto& cg = *lg.cross_attn;
      TensorT<T> dr2 = layer_norm_backward(dx2, lc.ln_cross, *lw.ln_cross, lg.ln_cross->gamma,
                                           lg.ln_cross->beta);
      dx1 = dr2;  // residual skip
      TensorT<T> dctx;
      {
        TensorT<T> dWo;
        matmul_transposed_a_into(lc.cross_ctx, dr2, dWo);
        add_inplace(cg.w_o, dWo);
        detail::add_column_sums(dr2, cg.b_o);
        matmul_transposed_b_into(dr2, cw.w_o, dctx);
      }
      TensorT<T> dqc = TensorT<T>::zeros({b * s, d});
      TensorT<T> dkc = TensorT<T>::zeros(lc.cross_k.shape);
      TensorT<T> dvc = TensorT<T>::zeros(lc.cross_v.shape);
      for (int i = 0; i < b; ++i) {
        const int begin = i * s;
        TensorT<T> dctx_i = detail::extract_rows(dctx, begin, s);
        TensorT<T> qi = detail::extract_rows(lc.cross_q, begin, s);
        TensorT<T> dqi = TensorT<T>::zeros({s, d});
        attention_context_backward(dctx_i, lc.cross_probs[static_cast<size_t>(i)], qi,
                                   lc.cross_k, lc.cross_v, heads, dqi, dkc, dvc);
        detail::insert_rows(dqc, dqi, begin);
      }
      {
        TensorT<T> dWq;
        matmul_transposed_a_into(lc.x1, dqc, dWq);
        add_inplace(cg.w_q, dWq);
        detail::add_column_sums(dqc, cg.b_q);
        TensorT<T> dxq;
        matmul_transposed_b_into(dqc, cw.w_q, dxq);
        add_inplace(dx1, dxq);
      }
      {
        TensorT<T> dWk;
        matmul_transposed_a_into(enc, dkc, dWk);
        add_inplace(cg.w_k, dWk);
        detail::add_column_sums(dkc, cg.b_k);
        TensorT<T> dWv;
        matmul_transposed_a_into(enc, dvc, dWv);
        add_inplace(cg.w_v, dWv);
        detail::add_column_sums(dvc, cg.b_v);
        if (denc != nullptr) {
          TensorT<T> de;
          matmul_transposed_b_into(dkc, cw.w_k, de);
          add_inplace(*denc, de);
          matmul_transposed_b_into(dvc, cw.w_v, de);
          add_inplace(*denc, de);
        }
      }
    } else {
      dx1 = std::move(dx2);
    }

    // ---- self-attention sublayer ----
    TensorT<T> dr1 = layer_norm_backward(dx1, lc.ln_self, lw.ln_self, lg.ln_self.gamma,
                                         lg.ln_self.beta);
    TensorT<T> dx0 = dr1;  // residual skip
    {
      TensorT<T> dctx;
      TensorT<T> dWo;
      matmul_transposed_a_into(lc.self_ctx, dr1, dWo);
      add_inplace(lg.self_attn.w_o, dWo);
      detail::add_column_sums(dr1, lg.self_attn.b_o);
      matmul_transposed_b_into(dr1, lw.self_attn.w_o, dctx);

      TensorT<T> dq = TensorT<T>::zeros({b * s, d});
      TensorT<T> dk = TensorT<T>::zeros({b * s, d});
      TensorT<T> dv = TensorT<T>::zeros({b * s, d});
      for (int i = 0; i < b; ++i) {
        const int begin = i * s;
        TensorT<T> dctx_i = detail::extract_rows(dctx, begin, s);
        TensorT<T> qi = detail::extract_rows(lc.self_q, begin, s);
        TensorT<T> ki = detail::extract_rows(lc.self_k, begin, s);
        TensorT<T> vi = detail::extract_rows(lc.self_v, begin, s);
        TensorT<T> dqi = TensorT<T>::zeros({s, d});
        TensorT<T> dki = TensorT<T>::zeros({s, d});
        TensorT<T> dvi = TensorT<T>::zeros({s, d});
        attention_context_backward(dctx_i, lc.self_probs[static_cast<size_t>(i)], qi, ki, vi,
                                   heads, dqi, dki, dvi);
        detail::insert_rows(dq, dqi, begin);
        detail::insert_rows(dk, dki, begin);
        detail::insert_rows(dv, dvi, begin);
      }
      auto backprop_projection = [&](const TensorT<T>& dproj, const TensorT<T>& weight,
                                     TensorT<T>& wgrad, TensorT<T>& bgrad) {
        TensorT<T> dWp;
        matmul_transposed_a_into(lc.x0, dproj, dWp);
        add_inplace(wgrad, dWp);
        detail::add_column_sums(dproj, bgrad);
        TensorT<T> dxp;
        matmul_transposed_b_into(dproj, weight, dxp);
        add_inplace(dx0, dxp);
      };
      backprop_projection(dq, lw.self_attn.w_q, lg.self_attn.w_q, lg.self_attn.b_q);
      backprop_projection(dk, lw.self_attn.w_k, lg.self_attn.w_k, lg.self_attn.b_k);
      backprop_projection(dv, lw.self_attn.w_v, lg.self_attn.w_v, lg.self_attn.b_v);
    }
    dx = std::move(dx0);
  }

  // Embedding gradients (positions are additive constants).
  const T emb_scale = std::sqrt(static_cast<T>(d));
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < s; ++t) {
      const int id = cache.batch.id_at(i, t);
      const T* drow = dx.row(i * s + t);
      T* grow = grads->token_embedding.row(id);
      for (int j = 0; j < d; ++j) grow[j] += drow[j] * emb_scale;
    }
  }
}

// Gradient of the additional encoder given d(e); pre_activation is the
// cached first-linear output from the forward pass.
template <class T>
void additional_encoder_backward(const TensorT<T>& features, const TensorT<T>& pre_activation,
                                 const AdditionalEncoderWeightsT<T>& w, const TensorT<T>& denc,
                                 AdditionalEncoderWeightsT<T>* grads) {
  TensorT<T> h = pre_activation;
  for (T& x : h.data) x = x > T(0) ? x : T(0);
  TensorT<T> dW2;
  matmul_transposed_a_into(h, denc, dW2);
  add_inplace(grads->w2, dW2);
  detail::add_column_sums(denc, grads->b2);
  TensorT<T> dh;
  matmul_transposed_b_into(denc, w.w2, dh);
  for (size_t i = 0; i < dh.data.size(); ++i) {
    if (pre_activation.data[i] <= T(0)) dh.data[i] = T(0);
  }
  TensorT<T> dW1;
  matmul_transposed_a_into(features, dh, dW1);
  add_inplace(grads->w1, dW1);
  detail::add_column_sums(dh, grads->b1);
}

}  // namespace trsc
