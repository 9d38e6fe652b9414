#include "trsc/lstm_rescorer.h"

#include <algorithm>
#include <cmath>

namespace trsc {

namespace {

void gaussian_fill(Tensor& t, Rng& rng, double stddev) {
  for (float& v : t.data) v = static_cast<float>(rng.gaussian(0.0, stddev));
}

}  // namespace

LstmRescorerWeights init_lstm_weights(const LstmRescorerConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  LstmRescorerWeights w;
  const int h = cfg.hidden, d = cfg.d_model, v = cfg.vocab_size, a = cfg.attention_dim;
  w.embedding = Tensor::zeros({v, d});
  gaussian_fill(w.embedding, rng, 1.0 / std::sqrt(static_cast<double>(d)));
  int in = 2 * d;
  for (int l = 0; l < cfg.num_layers; ++l) {
    LstmWeights lw;
    lw.w = Tensor::zeros({4 * h, in + h});
    lw.b = Tensor::zeros({4 * h});
    gaussian_fill(lw.w, rng, std::sqrt(2.0 / (in + h + h)));
    // Positive forget-gate bias, the usual recurrent-init convention.
    for (int j = 0; j < h; ++j) lw.b.data[static_cast<size_t>(h + j)] = 1.0f;
    w.layers.push_back(std::move(lw));
    in = h;
  }
  w.att_query_w = Tensor::zeros({h, a});
  gaussian_fill(w.att_query_w, rng, std::sqrt(2.0 / (h + a)));
  w.att_key_w = Tensor::zeros({d, a});
  gaussian_fill(w.att_key_w, rng, std::sqrt(2.0 / (d + a)));
  w.att_v = Tensor::zeros({a});
  gaussian_fill(w.att_v, rng, 1.0 / std::sqrt(static_cast<double>(a)));
  w.out_w = Tensor::zeros({h, v});
  gaussian_fill(w.out_w, rng, std::sqrt(2.0 / (h + v)));
  w.out_b = Tensor::zeros({v});
  return w;
}

LstmRescorer build_lstm_rescorer(LstmRescorerConfig cfg, LstmRescorerWeights weights) {
  cfg.validate();
  const int h = cfg.hidden, d = cfg.d_model, v = cfg.vocab_size, a = cfg.attention_dim;
  auto check = [](const std::string& name, const std::vector<int>& got,
                  const std::vector<int>& want) {
    if (got != want) {
      throw DimensionError("lstm tensor " + name + " has shape " + shape_str(got) +
                           ", expected " + shape_str(want));
    }
  };
  check("embedding", weights.embedding.shape, {v, d});
  if (static_cast<int>(weights.layers.size()) != cfg.num_layers) {
    throw ConfigError("lstm weights provide " + std::to_string(weights.layers.size()) +
                      " layers, config expects " + std::to_string(cfg.num_layers));
  }
  int in = 2 * d;
  for (int l = 0; l < cfg.num_layers; ++l) {
    check("layer" + std::to_string(l + 1) + "/w", weights.layers[static_cast<size_t>(l)].w.shape,
          {4 * h, in + h});
    check("layer" + std::to_string(l + 1) + "/b", weights.layers[static_cast<size_t>(l)].b.shape,
          {4 * h});
    in = h;
  }
  check("att_query_w", weights.att_query_w.shape, {h, a});
  check("att_key_w", weights.att_key_w.shape, {d, a});
  check("att_v", weights.att_v.shape, {a});
  check("out_w", weights.out_w.shape, {h, v});
  check("out_b", weights.out_b.shape, {v});
  return LstmRescorer{cfg, std::move(weights)};
}

QuantLstmWeights quantize_lstm_weights(const LstmRescorerWeights& w) {
  QuantLstmWeights q;
  for (const auto& layer : w.layers) q.layers.push_back(quantize_dynamic(layer.w));
  q.att_query_w = quantize_dynamic(w.att_query_w);
  q.att_key_w = quantize_dynamic(w.att_key_w);
  q.out_w = quantize_dynamic(w.out_w);
  return q;
}

Tensor lstm_attention_keys(const LstmRescorer& model, const Tensor& enc, ThreadPool* pool,
                           const QuantLstmWeights* quant) {
  if (enc.rank() != 2 || enc.shape[1] != model.config.d_model) {
    throw DimensionError("lstm rescorer expects [T x " + std::to_string(model.config.d_model) +
                         "] encoder output, got " + shape_str(enc.shape));
  }
  if (quant != nullptr) return qmatmul(enc, quant->att_key_w, pool);
  return matmul(enc, model.weights.att_key_w, pool);
}

namespace {

// One decode step. Returns the logits row for the current input token.
void lstm_decode_step(const LstmRescorer& model, const Tensor& enc, const Tensor& att_keys,
                      int token, std::vector<LstmStateT<float>>& states, float* logits,
                      ThreadPool* pool, const QuantLstmWeights* quant) {
  const auto& w = model.weights;
  const int d = model.config.d_model;
  const int h = model.config.hidden;
  const int a = model.config.attention_dim;
  const int frames = enc.shape[0];

  // Additive attention keyed on the previous top-layer state.
  const std::vector<float>& top = states.back().h;
  std::vector<float> query(static_cast<size_t>(a), 0.0f);
  {
    Tensor qrow = Tensor::zeros({1, h});
    std::copy(top.begin(), top.end(), qrow.data.begin());
    Tensor proj = quant != nullptr ? qmatmul(qrow, quant->att_query_w, pool)
                                   : matmul(qrow, w.att_query_w, pool);
    std::copy(proj.data.begin(), proj.data.end(), query.begin());
  }
  std::vector<float> scores(static_cast<size_t>(frames));
  float mx = -std::numeric_limits<float>::infinity();
  for (int t = 0; t < frames; ++t) {
    const float* key = att_keys.row(t);
    float acc = 0.0f;
    for (int j = 0; j < a; ++j) {
      acc += w.att_v.data[static_cast<size_t>(j)] *
             std::tanh(query[static_cast<size_t>(j)] + key[j]);
    }
    scores[static_cast<size_t>(t)] = acc;
    mx = std::max(mx, acc);
  }
  float denom = 0.0f;
  for (int t = 0; t < frames; ++t) {
    scores[static_cast<size_t>(t)] = std::exp(scores[static_cast<size_t>(t)] - mx);
    denom += scores[static_cast<size_t>(t)];
  }
  std::vector<float> context(static_cast<size_t>(d), 0.0f);
  const float inv = 1.0f / denom;
  for (int t = 0; t < frames; ++t) {
    const float alpha = scores[static_cast<size_t>(t)] * inv;
    const float* et = enc.row(t);
    for (int j = 0; j < d; ++j) context[static_cast<size_t>(j)] += alpha * et[j];
  }

  // [embedding ; context] feeds layer 1.
  std::vector<float> input(static_cast<size_t>(2 * d));
  const float* emb = w.embedding.row(token);
  std::copy(emb, emb + d, input.begin());
  std::copy(context.begin(), context.end(), input.begin() + d);

  std::vector<float> out(static_cast<size_t>(h));
  const float* layer_in = input.data();
  int in_dim = 2 * d;
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const QuantizedMatrix* qw = quant != nullptr ? &quant->layers[l] : nullptr;
    lstm_step(w.layers[l], layer_in, in_dim, states[l], out.data(), pool, qw);
    layer_in = out.data();
    in_dim = h;
  }

  Tensor hrow = Tensor::zeros({1, h});
  std::copy(out.begin(), out.end(), hrow.data.begin());
  Tensor row = quant != nullptr ? qmatmul(hrow, quant->out_w, pool)
                                : matmul(hrow, w.out_w, pool);
  for (int j = 0; j < model.config.vocab_size; ++j) {
    logits[j] = row.data[static_cast<size_t>(j)] + w.out_b.data[static_cast<size_t>(j)];
  }
}

}  // namespace

Tensor lstm_rescorer_forward(const LstmRescorer& model, const Tensor& enc,
                             std::span<const int> tokens, ThreadPool* pool,
                             const QuantLstmWeights* quant, int64_t* step_invocations) {
  const int v = model.config.vocab_size;
  for (size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || tokens[t] >= v) {
      throw IndexError("token id " + std::to_string(tokens[t]) + " out of vocabulary [0, " +
                       std::to_string(v) + ") at position " + std::to_string(t));
    }
  }
  if (static_cast<int>(tokens.size()) + 1 > model.config.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(tokens.size()) +
                         " exceeds max_seq_len " + std::to_string(model.config.max_seq_len));
  }
  Tensor att_keys = lstm_attention_keys(model, enc, pool, quant);
  const int steps = static_cast<int>(tokens.size()) + 1;
  Tensor logits = Tensor::zeros({steps, v});
  std::vector<LstmStateT<float>> states(model.weights.layers.size());
  for (auto& st : states) {
    st.c.assign(static_cast<size_t>(model.config.hidden), 0.0f);
    st.h.assign(static_cast<size_t>(model.config.hidden), 0.0f);
  }
  for (int t = 0; t < steps; ++t) {
    const int input = t == 0 ? vocab::kSosId : tokens[static_cast<size_t>(t - 1)];
    lstm_decode_step(model, enc, att_keys, input, states, logits.row(t), pool, quant);
    if (step_invocations != nullptr) ++*step_invocations;
  }
  return logits;
}

RescoreResult lstm_rescore_nbest(const LstmRescorer& model, const Tensor& enc,
                                 const NBestList& nbest, double lambda, ThreadPool* pool,
                                 const QuantLstmWeights* quant, int64_t* step_invocations) {
  if (nbest.hyps.empty()) throw ValueError("empty hypothesis list for utterance " + nbest.uid);
  const int b = static_cast<int>(nbest.hyps.size());
  RescoreResult result;
  result.second_pass_log_prob.resize(static_cast<size_t>(b));
  result.combined_score.resize(static_cast<size_t>(b));
  for (int h = 0; h < b; ++h) {
    const auto& hyp = nbest.hyps[static_cast<size_t>(h)];
    Tensor logits = lstm_rescorer_forward(model, enc, std::span<const int>(hyp.tokens), pool,
                                          quant, step_invocations);
    std::vector<int> targets = hyp.tokens;
    targets.push_back(vocab::kEosId);
    result.second_pass_log_prob[static_cast<size_t>(h)] =
        sequence_log_prob(logits, std::span<const int>(targets));
    result.combined_score[static_cast<size_t>(h)] =
        combine_scores(hyp.first_pass_log_prob, result.second_pass_log_prob[static_cast<size_t>(h)],
                       lambda);
  }
  result.ranking.resize(static_cast<size_t>(b));
  for (int h = 0; h < b; ++h) result.ranking[static_cast<size_t>(h)] = h;
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](int x, int y) {
    return result.combined_score[static_cast<size_t>(x)] >
           result.combined_score[static_cast<size_t>(y)];
  });
  // Within-step batching bound for the sequential engine: hyps x gates.
  result.batch_size_used = static_cast<int64_t>(b) * 4;
  return result;
}

}  // namespace trsc
