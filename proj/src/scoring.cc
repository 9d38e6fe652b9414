#include "trsc/scoring.h"

#include <algorithm>
#include <cmath>

namespace trsc {

double combine_scores(double first, double second, double lambda) {
  if (!std::isfinite(first) || !std::isfinite(second) || !std::isfinite(lambda)) {
    throw ValueError("combine_scores requires finite inputs");
  }
  return lambda * first + second;
}

TokenBatch build_hyp_batch(const std::vector<Hypothesis>& hyps, int vocab_size, int max_seq_len,
                           const std::string& uid) {
  if (hyps.empty()) throw ValueError("empty hypothesis list for utterance " + uid);
  int max_len = 0;
  for (size_t h = 0; h < hyps.size(); ++h) {
    const auto& hyp = hyps[h];
    if (hyp.tokens.empty()) {
      throw ValueError("utterance " + uid + " hypothesis " + std::to_string(h) +
                       " has no tokens");
    }
    for (size_t t = 0; t < hyp.tokens.size(); ++t) {
      const int id = hyp.tokens[t];
      if (id < vocab::kFirstContentId || id >= vocab_size) {
        throw ValueError("utterance " + uid + " hypothesis " + std::to_string(h) + " token " +
                         std::to_string(t) + ": id " + std::to_string(id) +
                         " is not a content word piece of vocab " + std::to_string(vocab_size));
      }
    }
    max_len = std::max(max_len, static_cast<int>(hyp.tokens.size()));
  }
  const int s = max_len + 1;  // SOS slot + tokens
  if (s + 1 > max_seq_len) {
    throw DimensionError("utterance " + uid + ": hypothesis length " + std::to_string(max_len) +
                         " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  TokenBatch batch;
  batch.batch = static_cast<int>(hyps.size());
  batch.seq_len = s;
  batch.ids.assign(static_cast<size_t>(batch.batch) * s, vocab::kPadId);
  batch.lengths.resize(hyps.size());
  for (size_t h = 0; h < hyps.size(); ++h) {
    int* row = batch.ids.data() + h * static_cast<size_t>(s);
    row[0] = vocab::kSosId;
    std::copy(hyps[h].tokens.begin(), hyps[h].tokens.end(), row + 1);
    batch.lengths[h] = static_cast<int>(hyps[h].tokens.size()) + 1;
  }
  return batch;
}

RescoreResult rescore_nbest_with_enc(const Model& model, const Tensor& enc,
                                     const NBestList& nbest, double lambda, ThreadPool* pool,
                                     const QuantModelWeights* quant,
                                     int64_t* forward_invocations) {
  const RescorerConfig& cfg = model.config;
  TokenBatch batch = build_hyp_batch(nbest.hyps, cfg.vocab_size, cfg.max_seq_len, nbest.uid);
  Tensor logits = transformer_forward(cfg, model.weights, enc, batch, pool, quant);
  if (forward_invocations != nullptr) ++*forward_invocations;

  const int b = batch.batch, s = batch.seq_len;
  RescoreResult result;
  result.second_pass_log_prob.resize(static_cast<size_t>(b));
  result.combined_score.resize(static_cast<size_t>(b));
  for (int h = 0; h < b; ++h) {
    std::vector<int> targets = nbest.hyps[static_cast<size_t>(h)].tokens;
    targets.push_back(vocab::kEosId);
    result.second_pass_log_prob[static_cast<size_t>(h)] =
        sequence_log_prob(logits, std::span<const int>(targets), h * s);
    result.combined_score[static_cast<size_t>(h)] =
        combine_scores(nbest.hyps[static_cast<size_t>(h)].first_pass_log_prob,
                       result.second_pass_log_prob[static_cast<size_t>(h)], lambda);
  }
  result.ranking.resize(static_cast<size_t>(b));
  for (int h = 0; h < b; ++h) result.ranking[static_cast<size_t>(h)] = h;
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](int a, int c) {
    return result.combined_score[static_cast<size_t>(a)] >
           result.combined_score[static_cast<size_t>(c)];
  });
  result.batch_size_used =
      static_cast<int64_t>(b) * (s - 1) * cfg.num_heads;  // hyps x padded length x heads
  return result;
}

RescoreResult rescore_nbest(const Model& model, const NBestList& nbest, double lambda,
                            ThreadPool* pool, const QuantModelWeights* quant,
                            int64_t* forward_invocations) {
  const QuantizedMatrix* qw1 = quant != nullptr ? &quant->enc_w1 : nullptr;
  const QuantizedMatrix* qw2 = quant != nullptr ? &quant->enc_w2 : nullptr;
  Tensor enc =
      additional_encoder_forward(nbest.features, model.weights.enc, pool, qw1, qw2);
  return rescore_nbest_with_enc(model, enc, nbest, lambda, pool, quant, forward_invocations);
}

}  // namespace trsc
