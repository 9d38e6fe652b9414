#include "trsc/training.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "trsc/rng.h"

namespace trsc {

MwerResult mwer_loss(std::span<const double> log_probs, std::span<const double> word_errors) {
  if (log_probs.empty()) throw ValueError("mwer_loss: empty beam");
  if (log_probs.size() != word_errors.size()) {
    throw DimensionError("mwer_loss: " + std::to_string(log_probs.size()) + " log-probs vs " +
                         std::to_string(word_errors.size()) + " word-error counts");
  }
  for (double lp : log_probs) {
    if (!std::isfinite(lp)) throw ValueError("mwer_loss: non-finite log-prob");
  }
  const size_t b = log_probs.size();
  MwerResult r;
  r.renormalized.resize(b);
  r.dlog_probs.resize(b);

  // P' = softmax(log P), the in-beam renormalization in log space.
  double mx = log_probs[0];
  for (double lp : log_probs) mx = std::max(mx, lp);
  double sum = 0.0;
  for (size_t i = 0; i < b; ++i) {
    r.renormalized[i] = std::exp(log_probs[i] - mx);
    sum += r.renormalized[i];
  }
  for (size_t i = 0; i < b; ++i) r.renormalized[i] /= sum;

  double mean = 0.0;
  for (double w : word_errors) mean += w;
  mean /= static_cast<double>(b);
  r.mean_errors = mean;

  double loss = 0.0;
  for (size_t i = 0; i < b; ++i) loss += r.renormalized[i] * (word_errors[i] - mean);
  r.loss = loss;
  for (size_t i = 0; i < b; ++i) {
    r.dlog_probs[i] = r.renormalized[i] * ((word_errors[i] - mean) - loss);
  }
  return r;
}

std::vector<int> token_swap(std::span<const int> tokens, const SwapPolicy& policy,
                            int vocab_size) {
  if (policy.proportion < 0.0 || policy.proportion > 1.0) {
    throw ValueError("swap proportion " + std::to_string(policy.proportion) +
                     " outside [0, 1]");
  }
  std::vector<int> candidates;
  candidates.reserve(static_cast<size_t>(vocab_size));
  for (int id = 0; id < vocab_size; ++id) {
    if (policy.sentinel_ids.count(id) == 0) candidates.push_back(id);
  }
  if (candidates.empty()) throw ConfigError("token_swap: no non-sentinel ids in vocab");
  Rng rng(policy.rng_seed);
  std::vector<int> out(tokens.begin(), tokens.end());
  for (int& id : out) {
    if (policy.sentinel_ids.count(id) > 0) continue;
    if (rng.uniform() < policy.proportion) {
      id = candidates[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
    }
  }
  return out;
}

// ------------------------------------------------------------------
// Gradient checks
// ------------------------------------------------------------------

namespace {

double rel_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

}  // namespace

GradCheckReport grad_check_function(const std::function<double(std::span<const double>)>& f,
                                    std::span<double> params, std::span<const double> analytic,
                                    double step) {
  if (params.size() != analytic.size()) {
    throw DimensionError("grad_check_function: params/analytic size mismatch");
  }
  GradCheckReport report;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = f(params);
    params[i] = saved - step;
    const double down = f(params);
    params[i] = saved;
    const double fd = (up - down) / (2.0 * step);
    const double err = rel_error(analytic[i], fd);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_tensor = "param[" + std::to_string(i) + "]";
    }
    ++report.checked;
  }
  return report;
}

namespace {

struct ModelCheckSetup {
  RescorerConfig cfg;
  ModelWeightsT<double> weights;
  TensorT<double> features;
  TokenBatch inputs;
  TokenBatch targets;                // CE targets
  std::vector<std::vector<int>> hyp_targets;  // MWER per-hyp targets (with EOS)
  std::vector<double> word_errs;
};

ModelCheckSetup make_check_setup(const RescorerConfig& cfg, uint64_t seed, bool mwer) {
  ModelCheckSetup s;
  s.cfg = cfg;
  s.weights = [&] {
    ModelWeightsT<double> w = make_zero_weights<double>(cfg);
    ModelWeights f = init_weights(cfg, seed);
    std::vector<TensorT<double>*> dst;
    for_each_tensor(w, [&](const std::string&, TensorT<double>& t) { dst.push_back(&t); });
    size_t i = 0;
    for_each_tensor(f, [&](const std::string&, Tensor& t) {
      dst[i]->data.assign(t.data.begin(), t.data.end());
      ++i;
    });
    return w;
  }();

  Rng rng(seed + 17);
  const int b = mwer ? 4 : 2;
  std::vector<std::vector<int>> token_seqs;
  for (int i = 0; i < b; ++i) {
    const int len = static_cast<int>(rng.uniform_int(3, 6));
    std::vector<int> seq;
    for (int t = 0; t < len; ++t) {
      seq.push_back(static_cast<int>(
          rng.uniform_int(vocab::kFirstContentId, cfg.vocab_size - 1)));
    }
    token_seqs.push_back(std::move(seq));
  }
  int max_len = 0;
  for (const auto& seq : token_seqs) max_len = std::max(max_len, static_cast<int>(seq.size()));
  const int slen = max_len + 1;
  s.inputs.batch = b;
  s.inputs.seq_len = slen;
  s.inputs.ids.assign(static_cast<size_t>(b) * slen, vocab::kPadId);
  s.inputs.lengths.resize(static_cast<size_t>(b));
  s.targets = s.inputs;
  for (int i = 0; i < b; ++i) {
    const auto& seq = token_seqs[static_cast<size_t>(i)];
    int* in_row = s.inputs.ids.data() + static_cast<size_t>(i) * slen;
    int* tgt_row = s.targets.ids.data() + static_cast<size_t>(i) * slen;
    in_row[0] = vocab::kSosId;
    std::copy(seq.begin(), seq.end(), in_row + 1);
    std::copy(seq.begin(), seq.end(), tgt_row);
    tgt_row[seq.size()] = vocab::kEosId;
    s.inputs.lengths[static_cast<size_t>(i)] = static_cast<int>(seq.size()) + 1;
    s.targets.lengths[static_cast<size_t>(i)] = static_cast<int>(seq.size()) + 1;
    if (mwer) {
      std::vector<int> with_eos = seq;
      with_eos.push_back(vocab::kEosId);
      s.hyp_targets.push_back(std::move(with_eos));
      s.word_errs.push_back(static_cast<double>(rng.uniform_int(0, 3)));
    }
  }

  const int frames = 2 * max_len;
  s.features = TensorT<double>::zeros({frames, cfg.enc_in_dim});
  for (double& v : s.features.data) v = rng.gaussian();
  return s;
}

double model_loss(const ModelCheckSetup& s, const ModelWeightsT<double>& w, bool mwer) {
  TensorT<double> enc = additional_encoder_forward(s.features, w.enc);
  TensorT<double> logits = transformer_forward(s.cfg, w, enc, s.inputs);
  if (!mwer) return ce_loss(logits, s.targets).loss;
  std::vector<double> log_probs;
  for (size_t h = 0; h < s.hyp_targets.size(); ++h) {
    log_probs.push_back(sequence_log_prob(logits, std::span<const int>(s.hyp_targets[h]),
                                          static_cast<int>(h) * s.inputs.seq_len));
  }
  return mwer_loss(log_probs, s.word_errs).loss;
}

ModelWeightsT<double> model_gradients(const ModelCheckSetup& s, bool mwer) {
  TensorT<double> enc_pre;
  TensorT<double> enc =
      additional_encoder_forward(s.features, s.weights.enc, nullptr, nullptr, nullptr, &enc_pre);
  TransformerCache<double> cache;
  TensorT<double> logits = transformer_forward(s.cfg, s.weights, enc, s.inputs, nullptr, nullptr,
                                               &cache);
  TensorT<double> dlogits;
  if (!mwer) {
    dlogits = ce_loss(logits, s.targets).dlogits;
  } else {
    std::vector<double> log_probs;
    for (size_t h = 0; h < s.hyp_targets.size(); ++h) {
      log_probs.push_back(sequence_log_prob(logits, std::span<const int>(s.hyp_targets[h]),
                                            static_cast<int>(h) * s.inputs.seq_len));
    }
    MwerResult mr = mwer_loss(log_probs, s.word_errs);
    dlogits = TensorT<double>::zeros(logits.shape);
    const int slen = s.inputs.seq_len;
    const int v = logits.shape[1];
    for (size_t h = 0; h < s.hyp_targets.size(); ++h) {
      const double g = mr.dlog_probs[h];
      for (size_t t = 0; t < s.hyp_targets[h].size(); ++t) {
        const int row_index = static_cast<int>(h) * slen + static_cast<int>(t);
        const double* row = logits.row(row_index);
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        const double log_z = mx + std::log(sum);
        double* drow = dlogits.row(row_index);
        // d log P / d logits = onehot - softmax.
        for (int j = 0; j < v; ++j) drow[j] = -g * std::exp(row[j] - log_z);
        drow[s.hyp_targets[h][t]] += g;
      }
    }
  }
  ModelWeightsT<double> grads = make_zero_weights<double>(s.cfg);
  TensorT<double> denc = TensorT<double>::zeros(enc.shape);
  transformer_backward(s.cfg, s.weights, enc, cache, dlogits, &grads, &denc);
  additional_encoder_backward(s.features, enc_pre, s.weights.enc, denc, &grads.enc);
  return grads;
}

GradCheckReport grad_check_model(const RescorerConfig& cfg, uint64_t seed, double step,
                                 bool mwer) {
  ModelCheckSetup s = make_check_setup(cfg, seed, mwer);
  ModelWeightsT<double> grads = model_gradients(s, mwer);

  std::map<std::string, const TensorT<double>*> grad_by_name;
  for_each_tensor(grads, [&](const std::string& name, const TensorT<double>& t) {
    grad_by_name[name] = &t;
  });

  GradCheckReport report;
  for_each_tensor(s.weights, [&](const std::string& name, TensorT<double>& t) {
    const TensorT<double>& g = *grad_by_name.at(name);
    for (size_t i = 0; i < t.data.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + step;
      const double up = model_loss(s, s.weights, mwer);
      t.data[i] = saved - step;
      const double down = model_loss(s, s.weights, mwer);
      t.data[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double err = rel_error(g.data[i], fd);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  });
  return report;
}

}  // namespace

GradCheckReport grad_check_ce(const RescorerConfig& cfg, uint64_t seed, double step) {
  return grad_check_model(cfg, seed, step, false);
}

GradCheckReport grad_check_mwer(const RescorerConfig& cfg, uint64_t seed, double step) {
  return grad_check_model(cfg, seed, step, true);
}

// ------------------------------------------------------------------
// Synthetic task
// ------------------------------------------------------------------

std::vector<std::string> tokens_to_words(std::span<const int> tokens) {
  std::vector<std::string> words;
  words.reserve(tokens.size());
  for (int id : tokens) words.push_back("t" + std::to_string(id));
  return words;
}

namespace {

std::vector<int> stub_edit(const std::vector<int>& ref, const ToyTaskSpec& spec, Rng& rng) {
  std::vector<int> hyp;
  auto random_content = [&] {
    return static_cast<int>(rng.uniform_int(vocab::kFirstContentId, spec.vocab_size - 1));
  };
  for (int id : ref) {
    if (rng.uniform() >= spec.stub_error_rate) {
      hyp.push_back(id);
      continue;
    }
    const int64_t op = rng.uniform_int(0, 2);
    if (op == 0) {  // substitution
      int repl = random_content();
      while (repl == id && spec.vocab_size - vocab::kFirstContentId > 1) repl = random_content();
      hyp.push_back(repl);
    } else if (op == 1) {  // deletion
      continue;
    } else {  // insertion
      hyp.push_back(id);
      hyp.push_back(random_content());
    }
  }
  if (hyp.empty()) hyp.push_back(random_content());
  return hyp;
}

NBestList make_toy_utterance(const ToyTaskSpec& spec, const Tensor& piece_embeddings,
                             const std::string& uid, Rng& rng) {
  NBestList list;
  list.uid = uid;
  const int len = static_cast<int>(rng.uniform_int(spec.min_len, spec.max_len));
  std::vector<int> ref;
  for (int t = 0; t < len; ++t) {
    ref.push_back(static_cast<int>(rng.uniform_int(vocab::kFirstContentId, spec.vocab_size - 1)));
  }
  list.reference_words = tokens_to_words(std::span<const int>(ref));

  const int frames = spec.frames_per_token * len;
  list.features = Tensor::zeros({frames, spec.enc_in_dim});
  for (int f = 0; f < frames; ++f) {
    const int token = ref[static_cast<size_t>(f / spec.frames_per_token)];
    const float* emb = piece_embeddings.row(token);
    float* row = list.features.row(f);
    for (int j = 0; j < spec.enc_in_dim; ++j) {
      row[j] = emb[j] + static_cast<float>(rng.gaussian(0.0, spec.feature_noise));
    }
  }

  for (int h = 0; h < spec.beam; ++h) {
    Hypothesis hyp;
    hyp.tokens = stub_edit(ref, spec, rng);
    const WerStats stats =
        word_errors(list.reference_words, tokens_to_words(std::span<const int>(hyp.tokens)));
    hyp.first_pass_log_prob = spec.stub_score_per_error * stats.errors() +
                              rng.gaussian(0.0, spec.stub_score_noise);
    list.hyps.push_back(std::move(hyp));
  }
  return list;
}

}  // namespace

ToyTask make_toy_task(const ToyTaskSpec& spec, int train_utts, int dev_utts) {
  if (spec.vocab_size <= vocab::kFirstContentId + 1) {
    throw ConfigError("toy task vocab too small");
  }
  ToyTask task;
  task.spec = spec;
  Rng rng(spec.seed);
  Tensor piece_embeddings = Tensor::zeros({spec.vocab_size, spec.enc_in_dim});
  for (float& v : piece_embeddings.data) v = static_cast<float>(rng.gaussian());
  for (int i = 0; i < train_utts; ++i) {
    task.train.push_back(
        make_toy_utterance(spec, piece_embeddings, "toy-train-" + std::to_string(i), rng));
  }
  for (int i = 0; i < dev_utts; ++i) {
    task.dev.push_back(
        make_toy_utterance(spec, piece_embeddings, "toy-dev-" + std::to_string(i), rng));
  }
  return task;
}

// ------------------------------------------------------------------
// Training loop
// ------------------------------------------------------------------

namespace {

void sgd_step(ModelWeights& w, const ModelWeights& g, float lr) {
  std::vector<Tensor*> params;
  for_each_tensor(w, [&](const std::string&, Tensor& t) { params.push_back(&t); });
  size_t i = 0;
  for_each_tensor(g, [&](const std::string&, const Tensor& t) {
    Tensor* p = params[i++];
    for (size_t j = 0; j < t.data.size(); ++j) p->data[j] -= lr * t.data[j];
  });
}

struct CeBatch {
  TokenBatch inputs;
  TokenBatch targets;
};

CeBatch make_ce_batch(const std::vector<int>& ref, SelfAttentionMode mode, double swap_p,
                      int vocab_size, uint64_t swap_seed) {
  CeBatch b;
  const int len = static_cast<int>(ref.size());
  const int slen = len + 1;
  b.inputs.batch = 1;
  b.inputs.seq_len = slen;
  b.inputs.lengths = {slen};
  b.inputs.ids.assign(static_cast<size_t>(slen), vocab::kPadId);
  b.inputs.ids[0] = vocab::kSosId;
  std::vector<int> decoder_tokens = ref;
  if (mode == SelfAttentionMode::kFullContext && swap_p > 0.0) {
    SwapPolicy policy;
    policy.proportion = swap_p;
    policy.rng_seed = swap_seed;
    decoder_tokens = token_swap(std::span<const int>(decoder_tokens), policy, vocab_size);
  }
  std::copy(decoder_tokens.begin(), decoder_tokens.end(), b.inputs.ids.begin() + 1);
  b.targets = b.inputs;
  // Prediction targets are the original sequence regardless of swapping.
  std::copy(ref.begin(), ref.end(), b.targets.ids.begin());
  b.targets.ids[static_cast<size_t>(len)] = vocab::kEosId;
  return b;
}

std::vector<int> reference_tokens(const NBestList& list) {
  // Toy word "t<id>" back to its id.
  std::vector<int> ids;
  for (const auto& w : list.reference_words) ids.push_back(std::stoi(w.substr(1)));
  return ids;
}

double utterance_ce(const Model& model, const NBestList& list, int* positions) {
  const std::vector<int> ref = reference_tokens(list);
  CeBatch batch = make_ce_batch(ref, model.config.self_attention_mode, 0.0,
                                model.config.vocab_size, 0);
  Tensor enc = additional_encoder_forward(list.features, model.weights.enc);
  Tensor logits = transformer_forward(model.config, model.weights, enc, batch.inputs);
  auto result = ce_loss(logits, batch.targets);
  if (positions != nullptr) *positions = batch.targets.lengths[0];
  return result.loss;
}

double dataset_ce(const Model& model, std::span<const NBestList> lists) {
  double weighted = 0.0;
  int64_t total_positions = 0;
  for (const auto& list : lists) {
    int positions = 0;
    const double loss = utterance_ce(model, list, &positions);
    weighted += loss * positions;
    total_positions += positions;
  }
  return weighted / static_cast<double>(total_positions);
}

}  // namespace

double expected_word_errors(const Model& model, std::span<const NBestList> lists) {
  double total = 0.0;
  for (const auto& list : lists) {
    RescoreResult res = rescore_nbest(model, list, 0.0);
    std::vector<double> errs;
    for (const auto& hyp : list.hyps) {
      errs.push_back(static_cast<double>(
          word_errors(list.reference_words, tokens_to_words(std::span<const int>(hyp.tokens)))
              .errors()));
    }
    MwerResult mr = mwer_loss(res.second_pass_log_prob, errs);
    double expected = 0.0;
    for (size_t i = 0; i < errs.size(); ++i) expected += mr.renormalized[i] * errs[i];
    total += expected;
  }
  return total / static_cast<double>(lists.size());
}

double top1_wer(const Model& model, std::span<const NBestList> lists, double lambda,
                bool use_second_pass) {
  std::vector<WerStats> stats;
  for (const auto& list : lists) {
    int best = 0;
    if (use_second_pass) {
      RescoreResult res = rescore_nbest(model, list, lambda);
      best = res.ranking[0];
    } else {
      for (size_t h = 1; h < list.hyps.size(); ++h) {
        if (list.hyps[h].first_pass_log_prob >
            list.hyps[static_cast<size_t>(best)].first_pass_log_prob) {
          best = static_cast<int>(h);
        }
      }
    }
    stats.push_back(word_errors(
        list.reference_words,
        tokens_to_words(std::span<const int>(list.hyps[static_cast<size_t>(best)].tokens))));
  }
  return corpus_wer(stats);
}

TrainResult train_toy(const ToyTaskSpec& task_spec, const RescorerConfig& cfg,
                      const TrainOptions& opts) {
  cfg.validate();
  if (cfg.vocab_size != task_spec.vocab_size || cfg.enc_in_dim != task_spec.enc_in_dim) {
    throw ConfigError("train_toy: config vocab/enc_in must match the task spec");
  }
  ToyTask task = make_toy_task(task_spec, opts.train_utts, opts.dev_utts);

  TrainResult result{Model{cfg, init_weights(cfg, opts.seed)}, {}, 0, 0, {}, 0, 0};
  Model& model = result.model;
  result.first_pass_dev_wer = top1_wer(model, task.dev, 1.0, false);

  Rng shuffle_rng(opts.seed + 101);
  std::vector<size_t> order(task.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  uint64_t swap_seed = opts.seed + 7777;
  int epoch_counter = 0;

  // ---- stage 1: cross entropy ----
  for (int epoch = 1; epoch <= opts.epochs_ce; ++epoch) {
    // Fisher-Yates with the deterministic stream.
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double train_loss = 0.0;
    for (size_t idx : order) {
      const NBestList& list = task.train[idx];
      const std::vector<int> ref = reference_tokens(list);
      CeBatch batch = make_ce_batch(ref, cfg.self_attention_mode, opts.swap_proportion,
                                    cfg.vocab_size, swap_seed++);
      Tensor enc_pre;
      Tensor enc = additional_encoder_forward(list.features, model.weights.enc, nullptr, nullptr,
                                              nullptr, &enc_pre);
      TransformerCache<float> cache;
      Tensor logits =
          transformer_forward(cfg, model.weights, enc, batch.inputs, nullptr, nullptr, &cache);
      auto ce = ce_loss(logits, batch.targets);
      if (!std::isfinite(ce.loss)) {
        throw Error("training diverged: non-finite CE loss at epoch " + std::to_string(epoch) +
                    " utterance " + list.uid);
      }
      train_loss += ce.loss;
      ModelWeights grads = make_zero_weights<float>(cfg);
      Tensor denc = Tensor::zeros(enc.shape);
      transformer_backward(cfg, model.weights, enc, cache, ce.dlogits, &grads, &denc);
      additional_encoder_backward(list.features, enc_pre, model.weights.enc, denc, &grads.enc);
      sgd_step(model.weights, grads, static_cast<float>(opts.lr_ce));
    }
    train_loss /= static_cast<double>(task.train.size());
    const double dev = dataset_ce(model, task.dev);
    const double dev_wer = top1_wer(model, task.dev, 0.0, true);
    result.dev_ce_per_epoch.push_back(dev);
    result.trace.push_back({++epoch_counter, "ce", train_loss, dev, dev_wer});
  }

  // ---- stage 2: minimum word error rate ----
  result.mwer_start_expected_errors = expected_word_errors(model, task.dev);
  for (int epoch = 1; epoch <= opts.epochs_mwer; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double train_loss = 0.0;
    for (size_t idx : order) {
      const NBestList& list = task.train[idx];
      TokenBatch batch =
          build_hyp_batch(list.hyps, cfg.vocab_size, cfg.max_seq_len, list.uid);
      Tensor enc_pre;
      Tensor enc = additional_encoder_forward(list.features, model.weights.enc, nullptr, nullptr,
                                              nullptr, &enc_pre);
      TransformerCache<float> cache;
      Tensor logits = transformer_forward(cfg, model.weights, enc, batch, nullptr, nullptr, &cache);
      std::vector<double> log_probs;
      std::vector<std::vector<int>> targets;
      std::vector<double> errs;
      for (size_t h = 0; h < list.hyps.size(); ++h) {
        std::vector<int> with_eos = list.hyps[h].tokens;
        with_eos.push_back(vocab::kEosId);
        log_probs.push_back(sequence_log_prob(logits, std::span<const int>(with_eos),
                                              static_cast<int>(h) * batch.seq_len));
        targets.push_back(std::move(with_eos));
        errs.push_back(static_cast<double>(
            word_errors(list.reference_words, tokens_to_words(std::span<const int>(list.hyps[h].tokens)))
                .errors()));
      }
      MwerResult mr = mwer_loss(log_probs, errs);
      if (!std::isfinite(mr.loss)) {
        throw Error("training diverged: non-finite MWER loss at epoch " + std::to_string(epoch) +
                    " utterance " + list.uid);
      }
      train_loss += mr.loss;
      Tensor dlogits = Tensor::zeros(logits.shape);
      const int v = logits.shape[1];
      for (size_t h = 0; h < targets.size(); ++h) {
        const double g = mr.dlog_probs[h];
        for (size_t t = 0; t < targets[h].size(); ++t) {
          const int row_index = static_cast<int>(h) * batch.seq_len + static_cast<int>(t);
          const float* row = logits.row(row_index);
          double mx = row[0];
          for (int j = 1; j < v; ++j) mx = std::max<double>(mx, row[j]);
          double sum = 0.0;
          for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
          const double log_z = mx + std::log(sum);
          float* drow = dlogits.row(row_index);
          for (int j = 0; j < v; ++j) {
            drow[j] = static_cast<float>(-g * std::exp(static_cast<double>(row[j]) - log_z));
          }
          drow[targets[h][t]] += static_cast<float>(g);
        }
      }
      ModelWeights grads = make_zero_weights<float>(cfg);
      Tensor denc = Tensor::zeros(enc.shape);
      transformer_backward(cfg, model.weights, enc, cache, dlogits, &grads, &denc);
      additional_encoder_backward(list.features, enc_pre, model.weights.enc, denc, &grads.enc);

      if (opts.mwer_ce_weight > 0.0) {
        const std::vector<int> ref = reference_tokens(list);
        CeBatch ce_batch = make_ce_batch(ref, cfg.self_attention_mode, 0.0, cfg.vocab_size, 0);
        TransformerCache<float> ce_cache;
        Tensor ce_logits = transformer_forward(cfg, model.weights, enc, ce_batch.inputs, nullptr,
                                               nullptr, &ce_cache);
        auto ce = ce_loss(ce_logits, ce_batch.targets);
        for (float& dv : ce.dlogits.data) dv *= static_cast<float>(opts.mwer_ce_weight);
        Tensor denc_ce = Tensor::zeros(enc.shape);
        transformer_backward(cfg, model.weights, enc, ce_cache, ce.dlogits, &grads, &denc_ce);
        additional_encoder_backward(list.features, enc_pre, model.weights.enc, denc_ce,
                                    &grads.enc);
      }
      sgd_step(model.weights, grads, static_cast<float>(opts.lr_mwer));
    }
    train_loss /= static_cast<double>(task.train.size());
    const double dev_expected = expected_word_errors(model, task.dev);
    const double dev_wer = top1_wer(model, task.dev, 0.0, true);
    result.trace.push_back({++epoch_counter, "mwer", train_loss, dev_expected, dev_wer});
  }
  result.mwer_end_expected_errors = expected_word_errors(model, task.dev);
  result.final_dev_wer = top1_wer(model, task.dev, 0.0, true);
  return result;
}

}  // namespace trsc
