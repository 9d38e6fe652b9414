#pragma once

#include <span>
#include <string>
#include <vector>

#include "trsc/transformer.h"

namespace trsc {

// One first-pass hypothesis: content word-piece ids (no SOS/EOS; the engine
// adds them) and the first-pass score.
struct Hypothesis {
  std::vector<int> tokens;
  double first_pass_log_prob = 0.0;
};

struct NBestList {
  std::string uid;
  Tensor features;  // T x enc_in_dim
  std::vector<Hypothesis> hyps;
  std::vector<std::string> reference_words;  // optional, for metrics/training
};

struct RescoreResult {
  std::vector<double> second_pass_log_prob;
  std::vector<double> combined_score;
  std::vector<int> ranking;  // hypothesis indices, best first
  int64_t batch_size_used = 0;
};

// lambda * first + second.
double combine_scores(double first, double second, double lambda);

// Sum over steps of log softmax(logits_row)[token], natural log, EOS
// included in tokens_with_eos. Rows are consumed starting at row_offset.
template <class T>
double sequence_log_prob(const TensorT<T>& logits, std::span<const int> tokens_with_eos,
                         int row_offset = 0) {
  const int rows = logits.shape[0];
  const int v = logits.shape[1];
  if (row_offset < 0 || row_offset + static_cast<int>(tokens_with_eos.size()) > rows) {
    throw DimensionError("sequence_log_prob: " + std::to_string(tokens_with_eos.size()) +
                         " targets from row " + std::to_string(row_offset) +
                         " exceed logits rows " + std::to_string(rows));
  }
  double total = 0.0;
  for (size_t t = 0; t < tokens_with_eos.size(); ++t) {
    const int id = tokens_with_eos[t];
    if (id < 0 || id >= v) {
      throw IndexError("target id " + std::to_string(id) + " outside vocab [0, " +
                       std::to_string(v) + ") at step " + std::to_string(t));
    }
    const T* row = logits.row(row_offset + static_cast<int>(t));
    double mx = static_cast<double>(row[0]);
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    total += static_cast<double>(row[id]) - mx - std::log(sum);
  }
  return total;
}

// Validates hypothesis token ids (content range only) and assembles the
// SOS-prefixed right-padded batch; lengths are hyp length + 1.
TokenBatch build_hyp_batch(const std::vector<Hypothesis>& hyps, int vocab_size, int max_seq_len,
                           const std::string& uid);

// The parallel second pass: runs the additional encoder once, scores all
// hypotheses in one batched forward, combines with first-pass scores, and
// ranks (ties broken by lower hypothesis index).
RescoreResult rescore_nbest(const Model& model, const NBestList& nbest, double lambda,
                            ThreadPool* pool = nullptr,
                            const QuantModelWeights* quant = nullptr,
                            int64_t* forward_invocations = nullptr);

// Variant for a precomputed encoder output (shared by training and tests).
RescoreResult rescore_nbest_with_enc(const Model& model, const Tensor& enc,
                                     const NBestList& nbest, double lambda,
                                     ThreadPool* pool = nullptr,
                                     const QuantModelWeights* quant = nullptr,
                                     int64_t* forward_invocations = nullptr);

}  // namespace trsc
