#include "trsc/cli.h"

#include <fstream>
#include <iomanip>

#include "CLI11.hpp"
#include "trsc/bench.h"
#include "trsc/io.h"
#include "trsc/training.h"

namespace trsc {

namespace {

RescorerConfig transformer_config_by_name(const std::string& name) {
  if (name == "paper" || name == "paper-2cross") return RescorerConfig::paper();
  if (name == "paper-4cross") return RescorerConfig::paper_4cross();
  if (name == "toy") return RescorerConfig::toy();
  if (name == "paper-scaled") return RescorerConfig::paper_scaled();
  throw ConfigError("unknown config '" + name +
                    "' (expected paper, paper-2cross, paper-4cross, paper-scaled, toy or "
                    "lstm-baseline)");
}

bool is_lstm_config(const std::string& name) {
  return name == "lstm-baseline" || name == "lstm-toy";
}

LstmRescorerConfig lstm_config_by_name(const std::string& name) {
  if (name == "lstm-baseline") return LstmRescorerConfig::baseline();
  if (name == "lstm-toy") return LstmRescorerConfig::toy();
  throw ConfigError("unknown lstm config '" + name + "'");
}

int cmd_params(const std::string& config, std::ostream& out) {
  const int64_t count = is_lstm_config(config)
                            ? count_params(lstm_config_by_name(config))
                            : count_params(transformer_config_by_name(config));
  out << count << "\n";
  return 0;
}

int cmd_flops(const std::string& config, int hyp_len, std::ostream& out) {
  const int64_t flops = is_lstm_config(config)
                            ? estimate_flops(lstm_config_by_name(config), hyp_len)
                            : estimate_flops(transformer_config_by_name(config), hyp_len);
  out << flops << "\n";
  return 0;
}

int cmd_rescore(const std::string& weights_path, const std::string& nbest_path,
                const std::string& out_path, double lambda, int threads, bool quantized,
                std::ostream& err) {
  Model model = load_weights(weights_path);
  std::optional<QuantModelWeights> quant;
  if (quantized) quant = quantize_model_weights(model.weights);
  ThreadPool pool(threads);
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + out_path + " for writing");
  write_rescore_header(out);
  NBestReader reader(nbest_path);
  int utterances = 0;
  while (auto list = reader.next()) {
    RescoreResult result =
        rescore_nbest(model, *list, lambda, &pool, quant.has_value() ? &*quant : nullptr);
    write_rescore_rows(out, *list, result);
    ++utterances;
  }
  if (!out) throw IoError("short write to " + out_path);
  err << "rescored " << utterances << " utterances -> " << out_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config, double tolerance, uint64_t seed, std::ostream& out) {
  const RescorerConfig cfg = transformer_config_by_name(config);
  const GradCheckReport ce = grad_check_ce(cfg, seed);
  out << "ce max_rel_error=" << format_double(ce.max_rel_error) << " checked=" << ce.checked
      << " worst=" << ce.worst_tensor << "\n";
  const GradCheckReport mwer = grad_check_mwer(cfg, seed + 1);
  out << "mwer max_rel_error=" << format_double(mwer.max_rel_error)
      << " checked=" << mwer.checked << " worst=" << mwer.worst_tensor << "\n";
  const bool ok = ce.max_rel_error <= tolerance && mwer.max_rel_error <= tolerance;
  out << (ok ? "PASS" : "FAIL") << " tolerance=" << format_double(tolerance) << "\n";
  return ok ? 0 : 1;
}

int cmd_train_toy(uint64_t seed, int epochs_ce, int epochs_mwer, const std::string& out_path,
                  const std::string& metrics_path, bool full_context, std::ostream& out) {
  ToyTaskSpec task;
  task.seed = seed;
  RescorerConfig cfg = RescorerConfig::toy();
  if (full_context) cfg.self_attention_mode = SelfAttentionMode::kFullContext;
  TrainOptions opts;
  opts.seed = seed;
  opts.epochs_ce = epochs_ce;
  opts.epochs_mwer = epochs_mwer;
  TrainResult result = train_toy(task, cfg, opts);
  if (!out_path.empty()) save_weights(out_path, cfg, result.model.weights);
  if (!metrics_path.empty()) {
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + metrics_path + " for writing");
    metrics << "epoch,stage,loss,dev_wer\n";
    for (const auto& m : result.trace) {
      metrics << m.epoch << ',' << m.stage << ',' << format_double(m.train_loss) << ','
              << format_double(m.dev_wer) << '\n';
    }
  }
  out << "first_pass_dev_wer=" << format_double(result.first_pass_dev_wer) << "\n";
  out << "final_dev_wer=" << format_double(result.final_dev_wer) << "\n";
  out << "mwer_expected_errors: start=" << format_double(result.mwer_start_expected_errors)
      << " end=" << format_double(result.mwer_end_expected_errors) << "\n";
  return 0;
}

int cmd_wer(const std::string& results_path, const std::string& nbest_path,
            const std::string& pieces_path, std::ostream& out) {
  const auto top1 = read_top1_from_results_csv(results_path);
  std::vector<std::string> piece_table;
  const std::vector<std::string>* pieces = nullptr;
  if (!pieces_path.empty()) {
    piece_table = load_piece_table(pieces_path);
    pieces = &piece_table;
  }
  std::vector<NBestList> lists = read_nbest_file(nbest_path);
  std::vector<WerStats> stats;
  for (const auto& [uid, hyp_index] : top1) {
    const NBestList* match = nullptr;
    for (const auto& list : lists) {
      if (list.uid == uid) {
        match = &list;
        break;
      }
    }
    if (match == nullptr) throw ValueError("results reference unknown uid '" + uid + "'");
    if (match->reference_words.empty()) {
      throw ValueError("utterance '" + uid + "' has no reference words");
    }
    if (hyp_index < 0 || hyp_index >= static_cast<int>(match->hyps.size())) {
      throw ValueError("results reference hypothesis " + std::to_string(hyp_index) +
                       " outside the n-best of '" + uid + "'");
    }
    const auto words = detokenize(
        std::span<const int>(match->hyps[static_cast<size_t>(hyp_index)].tokens), pieces);
    stats.push_back(word_errors(match->reference_words, words));
  }
  int errors = 0, words = 0;
  for (const auto& s : stats) {
    errors += s.errors();
    words += s.reference_word_count;
  }
  out << "wer=" << format_double(corpus_wer(stats)) << " errors=" << errors
      << " ref_words=" << words << " utterances=" << stats.size() << "\n";
  return 0;
}

int cmd_bench(const std::string& engine, int threads, uint64_t suite_seed, int n, bool quantized,
              int warmup, int reps, bool toy_dims, const std::string& out_path,
              const std::string& summary_path, const std::string& fig4_path, std::ostream& out,
              std::ostream& err) {
  const BenchSuite suite = generate_suite(n, suite_seed);
  BenchOptions opts;
  opts.threads = threads;
  opts.quantized = quantized;
  opts.warmup = warmup;
  opts.reps = reps;
  opts.toy_dims = toy_dims;

  std::vector<LatencyReport> reports;
  if (!fig4_path.empty()) {
    err << "fig4 mode: running transformer-parallel and lstm-sequential\n";
    reports.push_back(run_benchmark(suite, EngineKind::kTransformerParallel, opts));
    reports.push_back(run_benchmark(suite, EngineKind::kLstmSequential, opts));
    std::ofstream fig4(fig4_path, std::ios::trunc);
    if (!fig4) throw IoError("cannot open " + fig4_path + " for writing");
    write_fig4_csv(fig4, reports[0], reports[1]);
  } else {
    reports.push_back(run_benchmark(suite, engine_from_label(engine), opts));
  }

  if (!out_path.empty()) {
    std::ofstream timings(out_path, std::ios::trunc);
    if (!timings) throw IoError("cannot open " + out_path + " for writing");
    for (const auto& r : reports) write_timings_csv(timings, r);
  }
  if (!summary_path.empty()) {
    std::ofstream summary(summary_path, std::ios::trunc);
    if (!summary) throw IoError("cannot open " + summary_path + " for writing");
    write_summary_csv(summary, reports);
  }
  for (const auto& r : reports) {
    out << r.engine << " threads=" << r.threads << " quantized=" << (r.quantized ? 1 : 0)
        << " p50=" << format_double(r.p50) << "ms p90=" << format_double(r.p90)
        << "ms p99=" << format_double(r.p99) << "ms forwards=" << r.forward_invocations
        << " steps=" << r.step_invocations << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Second-pass n-best rescoring engine"};
  app.require_subcommand(1);

  // params
  auto* params = app.add_subcommand("params", "Count model parameters");
  std::string params_config = "paper";
  params->add_option("--config", params_config, "paper|paper-2cross|paper-4cross|toy|lstm-baseline");

  // flops
  auto* flops = app.add_subcommand("flops", "Estimate per-hypothesis MACs");
  std::string flops_config = "paper";
  int hyp_len = 12;
  flops->add_option("--config", flops_config, "model configuration");
  flops->add_option("--hyp-len", hyp_len, "hypothesis token length")->check(CLI::PositiveNumber);

  // rescore
  auto* rescore = app.add_subcommand("rescore", "Rescore an n-best file");
  std::string weights_path, nbest_path, results_path;
  double lambda = 0.0;
  int threads = 1;
  bool quantized = false;
  rescore->add_option("--weights", weights_path, "TRSC weight file")->required();
  rescore->add_option("--nbest", nbest_path, "n-best JSONL file")->required();
  rescore->add_option("--out", results_path, "results CSV path")->required();
  rescore->add_option("--lambda", lambda, "first-pass score weight");
  rescore->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  rescore->add_flag("--quantized", quantized, "use int8 dynamic-range weights");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  std::string grad_config = "toy";
  double tolerance = 1e-4;
  uint64_t grad_seed = 5;
  gradcheck->add_option("--config", grad_config, "toy|paper-scaled");
  gradcheck->add_option("--tolerance", tolerance, "max relative error");
  gradcheck->add_option("--seed", grad_seed, "rng seed");

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Two-stage CE+MWER training on the toy task");
  uint64_t train_seed = 1;
  int epochs_ce = 30, epochs_mwer = 8;
  std::string train_out, metrics_path;
  bool full_context = false;
  train->add_option("--seed", train_seed, "task and init seed");
  train->add_option("--epochs-ce", epochs_ce, "CE epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--epochs-mwer", epochs_mwer, "MWER epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--out", train_out, "output weight file");
  train->add_option("--metrics", metrics_path, "metrics trace CSV");
  train->add_flag("--full-context", full_context,
                  "non-causal self-attention with random token swapping");

  // bench
  auto* bench = app.add_subcommand("bench", "Latency benchmark harness");
  std::string engine = "transformer-parallel";
  uint64_t suite_seed = 7;
  int suite_n = 89, warmup = 3, reps = 10;
  bool bench_quantized = false, toy_dims = false;
  int bench_threads = 1;
  std::string bench_out, summary_path, fig4_path;
  bench->add_option("--engine", engine,
                    "transformer-parallel|transformer-4cross|lstm-sequential");
  bench->add_option("--threads", bench_threads, "worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--suite-seed", suite_seed, "suite generation seed");
  bench->add_option("--n", suite_n, "suite size")->check(CLI::PositiveNumber);
  bench->add_flag("--quantized", bench_quantized, "int8 weights");
  bench->add_option("--warmup", warmup, "discarded runs per utterance")
      ->check(CLI::NonNegativeNumber);
  bench->add_option("--reps", reps, "timed runs per utterance (median)")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--toy-dims", toy_dims, "tiny model dimensions (for smoke tests)");
  bench->add_option("--out", bench_out, "per-utterance timings CSV");
  bench->add_option("--summary", summary_path, "percentile summary CSV");
  bench->add_option("--fig4", fig4_path,
                    "per-percentile paired columns CSV (runs transformer and lstm)");

  // wer
  auto* wer = app.add_subcommand("wer", "Corpus WER of rank-1 results against references");
  std::string wer_results, wer_nbest, pieces_path;
  wer->add_option("--results", wer_results, "rescore results CSV")->required();
  wer->add_option("--nbest", wer_nbest, "n-best JSONL with references")->required();
  wer->add_option("--pieces", pieces_path, "word-piece table (one piece per line)");

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  std::string prog = "trsc";
  argv.push_back(prog.data());
  for (auto& a : storage) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (params->parsed()) return cmd_params(params_config, out);
    if (flops->parsed()) return cmd_flops(flops_config, hyp_len, out);
    if (rescore->parsed()) {
      return cmd_rescore(weights_path, nbest_path, results_path, lambda, threads, quantized, err);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(grad_config, tolerance, grad_seed, out);
    if (train->parsed()) {
      return cmd_train_toy(train_seed, epochs_ce, epochs_mwer, train_out, metrics_path,
                           full_context, out);
    }
    if (bench->parsed()) {
      return cmd_bench(engine, bench_threads, suite_seed, suite_n, bench_quantized, warmup, reps,
                       toy_dims, bench_out, summary_path, fig4_path, out, err);
    }
    if (wer->parsed()) return cmd_wer(wer_results, wer_nbest, pieces_path, out);
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 1;
}

}  // namespace trsc
