#include "trsc/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "trsc/io.h"
#include "trsc/rng.h"

namespace trsc {

BenchSuite generate_suite(int n, uint64_t seed) {
  if (n < 1) throw ConfigError("suite size must be >= 1");
  BenchSuite suite;
  suite.seed = seed;
  Rng rng(seed);
  // Anchor: the paper's reference point with 6s audio and 12 tokens.
  BenchUtterance anchor;
  anchor.uid = "bench-anchor";
  anchor.frames = static_cast<int>(std::lround(6.0 / suite.frame_seconds));
  anchor.hyp_token_lens = {12, 12, 12, 12};
  suite.utterances.push_back(anchor);
  for (int i = 1; i < n; ++i) {
    BenchUtterance utt;
    utt.uid = "bench-" + std::to_string(i);
    const double duration = rng.uniform(1.5, 9.3);
    utt.frames = static_cast<int>(std::lround(duration / suite.frame_seconds));
    for (int h = 0; h < 4; ++h) {
      utt.hyp_token_lens.push_back(static_cast<int>(rng.uniform_int(3, 29)));
    }
    suite.utterances.push_back(std::move(utt));
  }
  return suite;
}

std::string engine_label(EngineKind kind) {
  switch (kind) {
    case EngineKind::kTransformerParallel: return "transformer-parallel";
    case EngineKind::kTransformer4Cross: return "transformer-4cross";
    case EngineKind::kLstmSequential: return "lstm-sequential";
  }
  return "unknown";
}

EngineKind engine_from_label(const std::string& label) {
  if (label == "transformer-parallel") return EngineKind::kTransformerParallel;
  if (label == "transformer-4cross") return EngineKind::kTransformer4Cross;
  if (label == "lstm-sequential") return EngineKind::kLstmSequential;
  throw ConfigError("unknown engine '" + label +
                    "' (expected transformer-parallel, transformer-4cross or lstm-sequential)");
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) throw ValueError("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<size_t>(std::ceil(pct / 100.0 * n));
  if (rank < 1) rank = 1;
  if (rank > values.size()) rank = values.size();
  return values[rank - 1];
}

AdditionalEncoderWeights init_additional_encoder(int enc_in, int enc_hidden, int d_model,
                                                 uint64_t seed) {
  Rng rng(seed);
  AdditionalEncoderWeights enc;
  enc.w1 = Tensor::zeros({enc_in, enc_hidden});
  enc.b1 = Tensor::zeros({enc_hidden});
  enc.w2 = Tensor::zeros({enc_hidden, d_model});
  enc.b2 = Tensor::zeros({d_model});
  for (float& v : enc.w1.data) {
    v = static_cast<float>(rng.gaussian(0.0, std::sqrt(2.0 / (enc_in + enc_hidden))));
  }
  for (float& v : enc.w2.data) {
    v = static_cast<float>(rng.gaussian(0.0, std::sqrt(2.0 / (enc_hidden + d_model))));
  }
  return enc;
}

NBestList bench_nbest(const BenchSuite& suite, size_t index, int enc_in_dim, int vocab_size) {
  const BenchUtterance& utt = suite.utterances[index];
  Rng rng(suite.seed + 1000003ULL * (index + 1));
  NBestList list;
  list.uid = utt.uid;
  list.features = Tensor::zeros({utt.frames, enc_in_dim});
  for (float& v : list.features.data) v = static_cast<float>(rng.gaussian());
  for (int len : utt.hyp_token_lens) {
    Hypothesis hyp;
    for (int t = 0; t < len; ++t) {
      hyp.tokens.push_back(
          static_cast<int>(rng.uniform_int(vocab::kFirstContentId, vocab_size - 1)));
    }
    hyp.first_pass_log_prob = rng.gaussian(0.0, 2.0);
    list.hyps.push_back(std::move(hyp));
  }
  return list;
}

namespace {

using Clock = std::chrono::steady_clock;

double median_ms(std::vector<double>& samples) {
  std::sort(samples.begin(), samples.end());
  const size_t n = samples.size();
  if (n % 2 == 1) return samples[n / 2];
  return 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

}  // namespace

LatencyReport run_benchmark(const BenchSuite& suite, EngineKind engine,
                            const BenchOptions& opts) {
  if (opts.threads < 1) throw ConfigError("thread count must be >= 1");
  if (opts.reps < 1) throw ConfigError("reps must be >= 1");
  if (opts.warmup < 0) throw ConfigError("warmup must be >= 0");

  LatencyReport report;
  report.engine = engine_label(engine);
  report.threads = opts.threads;
  report.quantized = opts.quantized;
  report.environment = environment_descriptor();

  ThreadPool pool(opts.threads);

  // Engine setup (outside the timed region).
  std::optional<Model> transformer;
  std::optional<QuantModelWeights> transformer_quant;
  std::optional<LstmRescorer> lstm;
  std::optional<QuantLstmWeights> lstm_quant;
  std::optional<AdditionalEncoderWeights> lstm_enc;
  int enc_in_dim = 0, vocab_size = 0;
  if (engine == EngineKind::kLstmSequential) {
    LstmRescorerConfig cfg =
        opts.toy_dims ? LstmRescorerConfig::toy() : LstmRescorerConfig::baseline();
    cfg.max_seq_len = 64;
    lstm = build_lstm_rescorer(cfg, init_lstm_weights(cfg, opts.weight_seed));
    enc_in_dim = opts.toy_dims ? 16 : 512;
    lstm_enc = init_additional_encoder(enc_in_dim, enc_in_dim, cfg.d_model,
                                       opts.weight_seed + 1);
    vocab_size = cfg.vocab_size;
    if (opts.quantized) lstm_quant = quantize_lstm_weights(lstm->weights);
  } else {
    RescorerConfig cfg;
    if (opts.toy_dims) {
      cfg = RescorerConfig::toy();
      if (engine == EngineKind::kTransformer4Cross) cfg.cross_attention_layers = {1, 2, 3, 4};
    } else {
      cfg = engine == EngineKind::kTransformer4Cross ? RescorerConfig::paper_4cross()
                                                     : RescorerConfig::paper();
    }
    cfg.max_seq_len = 64;
    transformer = build_model(cfg, init_weights(cfg, opts.weight_seed));
    enc_in_dim = cfg.enc_in_dim;
    vocab_size = cfg.vocab_size;
    if (opts.quantized) transformer_quant = quantize_model_weights(transformer->weights);
  }

  for (size_t i = 0; i < suite.utterances.size(); ++i) {
    const NBestList list = bench_nbest(suite, i, enc_in_dim, vocab_size);
    UtteranceTiming timing;
    timing.uid = list.uid;
    timing.frames = suite.utterances[i].frames;
    timing.max_hyp_len = 0;
    for (const auto& hyp : list.hyps) {
      timing.max_hyp_len = std::max(timing.max_hyp_len, static_cast<int>(hyp.tokens.size()));
    }

    auto run_once = [&](bool instrument) {
      RescoreResult result;
      if (lstm.has_value()) {
        Tensor enc = additional_encoder_forward(list.features, *lstm_enc, &pool);
        result = lstm_rescore_nbest(*lstm, enc, list, opts.lambda, &pool,
                                    opts.quantized ? &*lstm_quant : nullptr,
                                    instrument ? &report.step_invocations : nullptr);
      } else {
        result = rescore_nbest(*transformer, list, opts.lambda, &pool,
                               opts.quantized ? &*transformer_quant : nullptr,
                               instrument ? &report.forward_invocations : nullptr);
      }
      return result;
    };

    // Dependency-path instrumentation happens on the first run only, so the
    // counts reflect exactly one pass over the utterance.
    bool counted = false;
    for (int wu = 0; wu < opts.warmup; ++wu) {
      auto r = run_once(!counted);
      counted = true;
      timing.batch_size = r.batch_size_used;
    }
    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(opts.reps));
    RescoreResult last;
    for (int rep = 0; rep < opts.reps; ++rep) {
      const auto start = Clock::now();
      auto r = run_once(!counted);
      const auto stop = Clock::now();
      counted = true;
      samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
      last = std::move(r);
    }
    timing.ms = median_ms(samples);
    timing.batch_size = last.batch_size_used;
    timing.scores = last.second_pass_log_prob;
    report.utterances.push_back(std::move(timing));
  }

  std::vector<double> times;
  for (const auto& u : report.utterances) times.push_back(u.ms);
  report.p50 = percentile_nearest_rank(times, 50.0);
  report.p90 = percentile_nearest_rank(times, 90.0);
  report.p99 = percentile_nearest_rank(times, 99.0);
  return report;
}

void write_timings_csv(std::ostream& out, const LatencyReport& report) {
  out << "uid,engine,threads,quantized,T,max_hyp_len,batch_size,ms\n";
  for (const auto& u : report.utterances) {
    out << u.uid << ',' << report.engine << ',' << report.threads << ','
        << (report.quantized ? 1 : 0) << ',' << u.frames << ',' << u.max_hyp_len << ','
        << u.batch_size << ',' << format_double(u.ms) << '\n';
  }
}

void write_summary_csv(std::ostream& out, std::span<const LatencyReport> reports) {
  out << "engine,threads,quantized,n,p50_ms,p90_ms,p99_ms,environment\n";
  for (const auto& r : reports) {
    out << r.engine << ',' << r.threads << ',' << (r.quantized ? 1 : 0) << ','
        << r.utterances.size() << ',' << format_double(r.p50) << ',' << format_double(r.p90)
        << ',' << format_double(r.p99) << ",\"" << r.environment << "\"\n";
  }
}

void write_fig4_csv(std::ostream& out, const LatencyReport& a, const LatencyReport& b) {
  std::vector<double> ta, tb;
  for (const auto& u : a.utterances) ta.push_back(u.ms);
  for (const auto& u : b.utterances) tb.push_back(u.ms);
  out << "percentile," << a.engine << "_ms," << b.engine << "_ms\n";
  for (int pct = 5; pct <= 100; pct += 5) {
    out << pct << ',' << format_double(percentile_nearest_rank(ta, pct)) << ','
        << format_double(percentile_nearest_rank(tb, pct)) << '\n';
  }
}

std::string environment_descriptor() {
  std::string cpu = "unknown-cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const size_t colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        while (!cpu.empty() && cpu.front() == ' ') cpu.erase(cpu.begin());
      }
      break;
    }
  }
  return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
}

}  // namespace trsc
