#pragma once

#include <span>

#include "trsc/model.h"
#include "trsc/scoring.h"

namespace trsc {

// Sequential attention-decoder baseline. Step t embeds the input token,
// attends over the encoder output with additive attention keyed on the
// previous top-layer state, runs the LSTM stack and projects to logits.
struct LstmRescorerWeights {
  Tensor embedding;                 // V x d_model
  std::vector<LstmWeights> layers;  // layer 1 input: [embedding ; context]
  Tensor att_query_w;               // hidden x attention_dim
  Tensor att_key_w;                 // d_model x attention_dim
  Tensor att_v;                     // attention_dim
  Tensor out_w;                     // hidden x V
  Tensor out_b;                     // V
};

struct LstmRescorer {
  LstmRescorerConfig config;
  LstmRescorerWeights weights;
};

struct QuantLstmWeights {
  std::vector<QuantizedMatrix> layers;
  QuantizedMatrix att_query_w, att_key_w;
  QuantizedMatrix out_w;
};

LstmRescorerWeights init_lstm_weights(const LstmRescorerConfig& cfg, uint64_t seed);
LstmRescorer build_lstm_rescorer(LstmRescorerConfig cfg, LstmRescorerWeights weights);
QuantLstmWeights quantize_lstm_weights(const LstmRescorerWeights& w);

// Per-utterance precomputation: enc * att_key_w, reused by every step.
Tensor lstm_attention_keys(const LstmRescorer& model, const Tensor& enc, ThreadPool* pool,
                           const QuantLstmWeights* quant);

// Sequential scoring of one token sequence: logits row per input position
// [SOS, tokens...]. Each step consumes the previous step's state, so step
// t+1 cannot start before step t completes. step_invocations, when given,
// counts len+1 steps.
Tensor lstm_rescorer_forward(const LstmRescorer& model, const Tensor& enc,
                             std::span<const int> tokens, ThreadPool* pool = nullptr,
                             const QuantLstmWeights* quant = nullptr,
                             int64_t* step_invocations = nullptr);

// Scores every hypothesis one-by-one, sequentially; the baseline the latency
// harness compares against. enc is shared per utterance.
RescoreResult lstm_rescore_nbest(const LstmRescorer& model, const Tensor& enc,
                                 const NBestList& nbest, double lambda,
                                 ThreadPool* pool = nullptr,
                                 const QuantLstmWeights* quant = nullptr,
                                 int64_t* step_invocations = nullptr);

}  // namespace trsc
