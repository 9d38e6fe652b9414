#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "trsc/lstm_rescorer.h"

namespace trsc {

struct BenchUtterance {
  std::string uid;
  int frames = 0;                  // audio duration / frame_seconds
  std::vector<int> hyp_token_lens;  // one per hypothesis
};

// Synthetic latency suite: durations uniform over [1.5s, 9.3s], hypothesis
// token lengths uniform over [3, 29], beam 4, plus one anchor utterance with
// 6s audio and 12-token hypotheses.
struct BenchSuite {
  std::vector<BenchUtterance> utterances;
  uint64_t seed = 0;
  double frame_seconds = 0.030;
};

BenchSuite generate_suite(int n, uint64_t seed);

enum class EngineKind { kTransformerParallel, kTransformer4Cross, kLstmSequential };

std::string engine_label(EngineKind kind);
EngineKind engine_from_label(const std::string& label);

struct BenchOptions {
  int threads = 1;
  bool quantized = false;
  int warmup = 3;
  int reps = 10;
  uint64_t weight_seed = 42;
  bool toy_dims = false;  // tiny models so unit tests stay fast
  double lambda = 0.0;
};

struct UtteranceTiming {
  std::string uid;
  int frames = 0;
  int max_hyp_len = 0;
  int64_t batch_size = 0;
  double ms = 0.0;                  // median over reps after warmup
  std::vector<double> scores;       // second-pass log-probs, for determinism checks
};

struct LatencyReport {
  std::string engine;
  int threads = 1;
  bool quantized = false;
  std::vector<UtteranceTiming> utterances;
  double p50 = 0.0, p90 = 0.0, p99 = 0.0;
  std::string environment;
  // Dependency-path instrumentation, counted over one pass of the suite.
  int64_t forward_invocations = 0;
  int64_t step_invocations = 0;
};

// Nearest-rank percentile: the ceil(p/100 * N)-th smallest value.
double percentile_nearest_rank(std::vector<double> values, double pct);

// Deterministic inputs per utterance (identical across engines and thread
// counts); wall time measured per utterance with a monotonic clock.
LatencyReport run_benchmark(const BenchSuite& suite, EngineKind engine,
                            const BenchOptions& opts);

void write_timings_csv(std::ostream& out, const LatencyReport& report);
void write_summary_csv(std::ostream& out, std::span<const LatencyReport> reports);
// Paired per-percentile columns (5, 10, ..., 100) for external plotting.
void write_fig4_csv(std::ostream& out, const LatencyReport& a, const LatencyReport& b);

std::string environment_descriptor();

// Standalone additional-encoder init so the sequential baseline can share
// the feature adapter.
AdditionalEncoderWeights init_additional_encoder(int enc_in, int enc_hidden, int d_model,
                                                 uint64_t seed);

// The deterministic per-utterance N-best input the harness feeds every
// engine (exposed for tests).
NBestList bench_nbest(const BenchSuite& suite, size_t index, int enc_in_dim, int vocab_size);

}  // namespace trsc
