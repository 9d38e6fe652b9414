#pragma once

#include <functional>
#include <set>
#include <span>

#include "trsc/metrics.h"
#include "trsc/scoring.h"
#include "trsc/transformer.h"

namespace trsc {

// ------------------------------------------------------------------
// Losses
// ------------------------------------------------------------------

template <class T>
struct CeLossResultT {
  double loss = 0.0;
  TensorT<T> dlogits;
};

// Mean negative log-likelihood over non-pad positions. targets.ids carries
// the prediction target per position; positions at or beyond the per-item
// length contribute nothing and get zero gradient.
template <class T>
CeLossResultT<T> ce_loss(const TensorT<T>& logits, const TokenBatch& targets) {
  const int b = targets.batch, s = targets.seq_len;
  const int v = logits.shape[1];
  if (logits.shape[0] != b * s) {
    throw DimensionError("ce_loss: logits rows " + std::to_string(logits.shape[0]) +
                         " do not match batch " + std::to_string(b) + " x seq " +
                         std::to_string(s));
  }
  int64_t count = 0;
  for (int i = 0; i < b; ++i) {
    if (targets.lengths[static_cast<size_t>(i)] < 0 ||
        targets.lengths[static_cast<size_t>(i)] > s) {
      throw DimensionError("ce_loss: length " +
                           std::to_string(targets.lengths[static_cast<size_t>(i)]) +
                           " outside [0, " + std::to_string(s) + "]");
    }
    count += targets.lengths[static_cast<size_t>(i)];
  }
  if (count == 0) throw ValueError("ce_loss: no non-pad target positions");

  CeLossResultT<T> result;
  result.dlogits = TensorT<T>::zeros(logits.shape);
  const double inv_count = 1.0 / static_cast<double>(count);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < targets.lengths[static_cast<size_t>(i)]; ++t) {
      const int row_index = i * s + t;
      const int target = targets.id_at(i, t);
      if (target < 0 || target >= v) {
        throw IndexError("ce_loss: target id " + std::to_string(target) + " outside vocab [0, " +
                         std::to_string(v) + ")");
      }
      const T* row = logits.row(row_index);
      double mx = static_cast<double>(row[0]);
      for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double sum = 0.0;
      for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
      const double log_z = mx + std::log(sum);
      loss -= (static_cast<double>(row[target]) - log_z) * inv_count;
      T* drow = result.dlogits.row(row_index);
      for (int j = 0; j < v; ++j) {
        const double p = std::exp(static_cast<double>(row[j]) - log_z);
        drow[j] = static_cast<T>(p * inv_count);
      }
      drow[target] -= static_cast<T>(inv_count);
    }
  }
  result.loss = loss;
  return result;
}

struct MwerResult {
  double loss = 0.0;
  std::vector<double> dlog_probs;   // d loss / d log P(y_m | x)
  std::vector<double> renormalized; // P'(y_m | x, H)
  double mean_errors = 0.0;         // W-hat
};

// Expected excess word errors over the beam-renormalized distribution:
// sum_m P'_m [W'_m - W-hat], with P' the softmax of the given log-probs and
// W-hat the arithmetic mean of the word errors.
MwerResult mwer_loss(std::span<const double> log_probs, std::span<const double> word_errors);

// ------------------------------------------------------------------
// Random token swapping (full-context training)
// ------------------------------------------------------------------

struct SwapPolicy {
  double proportion = 0.15;
  std::set<int> sentinel_ids = {vocab::kPadId, vocab::kSosId, vocab::kEosId, vocab::kUnkId,
                                vocab::kBlankId};
  uint64_t rng_seed = 0;
};

// Each non-sentinel position is independently replaced with probability
// `proportion` by a uniform draw over the non-sentinel vocabulary. Sentinel
// positions are untouched and sentinels are never drawn as replacements.
std::vector<int> token_swap(std::span<const int> tokens, const SwapPolicy& policy,
                            int vocab_size);

// ------------------------------------------------------------------
// Gradient checking (central finite differences are the oracle)
// ------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  int64_t checked = 0;
};

// Compares analytic against central finite differences of f at params.
GradCheckReport grad_check_function(const std::function<double(std::span<const double>)>& f,
                                    std::span<double> params, std::span<const double> analytic,
                                    double step);

// Full-model checks in double precision: every scalar of every parameter
// tensor, including the additional encoder.
GradCheckReport grad_check_ce(const RescorerConfig& cfg, uint64_t seed, double step = 1e-5);
GradCheckReport grad_check_mwer(const RescorerConfig& cfg, uint64_t seed, double step = 1e-5);

// ------------------------------------------------------------------
// Synthetic rescoring task and the two-stage training loop
// ------------------------------------------------------------------

struct ToyTaskSpec {
  int vocab_size = 64;
  int min_len = 3;
  int max_len = 12;
  int enc_in_dim = 16;
  int frames_per_token = 2;
  double feature_noise = 0.1;
  double stub_error_rate = 0.2;   // first-pass per-token edit rate
  double stub_score_per_error = -1.0;
  double stub_score_noise = 1.2;
  int beam = 4;
  uint64_t seed = 1;
};

struct ToyTask {
  ToyTaskSpec spec;
  std::vector<NBestList> train;
  std::vector<NBestList> dev;
};

// Reference sequences with noisy-embedding features over 2 frames per token
// and a frozen first-pass stub producing b=4 edit-corrupted hypotheses with
// a fixed noisy log-likelihood score.
ToyTask make_toy_task(const ToyTaskSpec& spec, int train_utts, int dev_utts);

// Toy detokenization: every content id becomes its own word.
std::vector<std::string> tokens_to_words(std::span<const int> tokens);

struct TrainOptions {
  int epochs_ce = 30;
  int epochs_mwer = 8;
  double lr_ce = 0.05;
  double lr_mwer = 0.01;
  double mwer_ce_weight = 0.0;    // optional CE interpolation during MWER, off by default
  double swap_proportion = 0.15;  // used only in full-context mode
  int train_utts = 256;
  int dev_utts = 64;
  uint64_t seed = 1;
};

struct EpochMetric {
  int epoch = 0;
  std::string stage;  // "ce" | "mwer"
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_wer = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetric> trace;
  double first_pass_dev_wer = 0.0;       // stub top-1, the baseline to beat
  double final_dev_wer = 0.0;            // rescored top-1 at lambda = 0
  std::vector<double> dev_ce_per_epoch;  // CE stage
  double mwer_start_expected_errors = 0.0;
  double mwer_end_expected_errors = 0.0;
};

// Stage 1 minimizes CE on (features, reference); stage 2 minimizes MWER over
// the stub N-best lists. Plain SGD with constant learning rates. Throws on
// divergence (non-finite loss).
TrainResult train_toy(const ToyTaskSpec& task_spec, const RescorerConfig& cfg,
                      const TrainOptions& opts);

// Mean over lists of sum_m P'_m W'_m under the model's current scores; the
// held-out metric the MWER stage must reduce.
double expected_word_errors(const Model& model, std::span<const NBestList> lists);

// Corpus WER of the top-1 hypothesis: by combined score at the given lambda
// when use_second_pass, otherwise by first-pass score alone.
double top1_wer(const Model& model, std::span<const NBestList> lists, double lambda,
                bool use_second_pass);

}  // namespace trsc
