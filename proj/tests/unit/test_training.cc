#include <cmath>

#include "doctest.h"
#include "oracles.h"
#include "trsc/training.h"

using namespace trsc;
using trsc::testing::random_tensor;

TEST_SUITE_BEGIN("training");

TEST_CASE("ce loss of uniform logits is ln V") {
  const int v = 32;
  TokenBatch targets;
  targets.batch = 2;
  targets.seq_len = 3;
  targets.ids = {5, 6, 7, 8, 9, 0};
  targets.lengths = {3, 2};
  Tensor logits = Tensor::zeros({6, v});
  auto result = ce_loss(logits, targets);
  CHECK(result.loss == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-9));
  // Pad position gets zero gradient.
  for (int j = 0; j < v; ++j) CHECK(result.dlogits.at(5, j) == 0.0f);
}

TEST_CASE("ce loss of saturated correct logits approaches zero") {
  const int v = 16;
  TokenBatch targets;
  targets.batch = 1;
  targets.seq_len = 2;
  targets.ids = {5, 6};
  targets.lengths = {2};
  Tensor logits = Tensor::zeros({2, v});
  logits.at(0, 5) = 80.0f;
  logits.at(1, 6) = 80.0f;
  CHECK(ce_loss(logits, targets).loss < 1e-8);
}

TEST_CASE("ce gradient matches finite差 differences on random logits" *
          doctest::description("fd oracle")) {
  // Double precision logits so the FD oracle is meaningful.
  Rng rng(81);
  const int v = 12;
  TokenBatch targets;
  targets.batch = 2;
  targets.seq_len = 3;
  targets.ids = {5, 6, 7, 8, 9, 0};
  targets.lengths = {3, 2};
  TensorT<double> logits = TensorT<double>::zeros({6, v});
  for (double& x : logits.data) x = rng.gaussian();
  auto result = ce_loss(logits, targets);
  const double h = 1e-6;
  double max_err = 0.0;
  for (size_t i = 0; i < logits.data.size(); ++i) {
    const double saved = logits.data[i];
    logits.data[i] = saved + h;
    const double up = ce_loss(logits, targets).loss;
    logits.data[i] = saved - h;
    const double down = ce_loss(logits, targets).loss;
    logits.data[i] = saved;
    const double fd = (up - down) / (2 * h);
    max_err = std::max(max_err, std::fabs(fd - result.dlogits.data[i]));
  }
  CHECK(max_err < 1e-7);
}

TEST_CASE("ce loss is permutation-equivariant over the batch") {
  Rng rng(82);
  const int v = 10;
  Tensor logits = random_tensor({4, v}, rng);
  TokenBatch t1;
  t1.batch = 2;
  t1.seq_len = 2;
  t1.ids = {5, 6, 7, 8};
  t1.lengths = {2, 2};
  Tensor swapped_logits = Tensor::zeros({4, v});
  for (int j = 0; j < v; ++j) {
    swapped_logits.at(0, j) = logits.at(2, j);
    swapped_logits.at(1, j) = logits.at(3, j);
    swapped_logits.at(2, j) = logits.at(0, j);
    swapped_logits.at(3, j) = logits.at(1, j);
  }
  TokenBatch t2 = t1;
  t2.ids = {7, 8, 5, 6};
  CHECK(ce_loss(logits, t1).loss == doctest::Approx(ce_loss(swapped_logits, t2).loss));
}

TEST_CASE("mwer loss zero when word errors are equal") {
  std::vector<double> lp{-1.0, -2.0, -0.5};
  std::vector<double> we{3.0, 3.0, 3.0};
  auto r = mwer_loss(lp, we);
  CHECK(r.loss == 0.0);
}

TEST_CASE("mwer loss zero for a single-hypothesis beam") {
  std::vector<double> lp{-4.2};
  std::vector<double> we{2.0};
  auto r = mwer_loss(lp, we);
  CHECK(r.loss == 0.0);
  CHECK(r.renormalized[0] == 1.0);
  CHECK(r.mean_errors == 2.0);
}

TEST_CASE("mwer hand case 0.6") {
  // P' = [0.8, 0.2], W = [2, 0]: W-hat = 1, loss = 0.8 - 0.2 = 0.6.
  std::vector<double> lp{std::log(0.8), std::log(0.2)};
  std::vector<double> we{2.0, 0.0};
  auto r = mwer_loss(lp, we);
  CHECK(std::fabs(r.loss - 0.6) < 1e-12);
}

TEST_CASE("mwer invariant under constant log-prob shifts") {
  Rng rng(83);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> lp, we;
    for (int i = 0; i < 4; ++i) {
      lp.push_back(rng.gaussian(0.0, 5.0));
      we.push_back(static_cast<double>(rng.uniform_int(0, 6)));
    }
    const double base = mwer_loss(lp, we).loss;
    std::vector<double> shifted = lp;
    for (double& x : shifted) x += 17.25;
    CHECK(std::fabs(mwer_loss(shifted, we).loss - base) < 1e-12);
  }
}

TEST_CASE("mwer gradient components sum to zero") {
  Rng rng(84);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> lp, we;
    for (int i = 0; i < 5; ++i) {
      lp.push_back(rng.gaussian(0.0, 3.0));
      we.push_back(static_cast<double>(rng.uniform_int(0, 4)));
    }
    auto r = mwer_loss(lp, we);
    double sum = 0.0;
    for (double g : r.dlog_probs) sum += g;
    CHECK(std::fabs(sum) < 1e-10);
  }
}

TEST_CASE("mwer gradient matches finite differences") {
  Rng rng(85);
  std::vector<double> lp{-1.2, 0.4, -0.7, -2.2};
  std::vector<double> we{2.0, 0.0, 1.0, 4.0};
  auto r = mwer_loss(lp, we);
  const double h = 1e-6;
  for (size_t i = 0; i < lp.size(); ++i) {
    std::vector<double> up = lp, down = lp;
    up[i] += h;
    down[i] -= h;
    const double fd = (mwer_loss(up, we).loss - mwer_loss(down, we).loss) / (2 * h);
    CHECK(fd == doctest::Approx(r.dlog_probs[i]).epsilon(1e-6));
  }
}

TEST_CASE("a small mwer gradient step reduces expected word errors") {
  Rng rng(86);
  std::vector<double> lp{-0.5, -1.5, -0.9, -2.0};
  std::vector<double> we{0.0, 2.0, 1.0, 3.0};
  auto expected_errors = [&](const std::vector<double>& scores) {
    auto r = mwer_loss(scores, we);
    double e = 0.0;
    for (size_t i = 0; i < we.size(); ++i) e += r.renormalized[i] * we[i];
    return e;
  };
  auto r = mwer_loss(lp, we);
  std::vector<double> stepped = lp;
  const double lr = 1e-3;
  for (size_t i = 0; i < lp.size(); ++i) stepped[i] -= lr * r.dlog_probs[i];
  CHECK(expected_errors(stepped) < expected_errors(lp));
}

TEST_CASE("mwer rejects bad input") {
  CHECK_THROWS_AS(mwer_loss({}, {}), ValueError);
  std::vector<double> lp{0.0, std::numeric_limits<double>::infinity()};
  std::vector<double> we{0.0, 1.0};
  CHECK_THROWS_AS(mwer_loss(lp, we), ValueError);
}

TEST_CASE("token swap p=0 is the identity") {
  std::vector<int> tokens{5, 6, 7, vocab::kEosId, 8};
  SwapPolicy policy;
  policy.proportion = 0.0;
  CHECK(token_swap(tokens, policy, 64) == tokens);
}

TEST_CASE("token swap p=1 replaces every content position, never sentinels") {
  std::vector<int> tokens;
  for (int i = 0; i < 200; ++i) tokens.push_back(5 + i % 59);
  tokens.push_back(vocab::kSosId);
  tokens.push_back(vocab::kEosId);
  SwapPolicy policy;
  policy.proportion = 1.0;
  policy.rng_seed = 3;
  std::vector<int> swapped = token_swap(tokens, policy, 64);
  for (size_t i = 0; i < 200; ++i) {
    CHECK(swapped[i] >= vocab::kFirstContentId);
    CHECK(swapped[i] < 64);
  }
  CHECK(swapped[200] == vocab::kSosId);
  CHECK(swapped[201] == vocab::kEosId);
}

TEST_CASE("token swap at p=0.15 hits the target fraction") {
  // Big vocab so replacement collisions with the original are negligible.
  const int vocab_size = 4096;
  std::vector<int> tokens;
  const size_t n = 120000;
  Rng rng(87);
  for (size_t i = 0; i < n; ++i) {
    tokens.push_back(static_cast<int>(rng.uniform_int(vocab::kFirstContentId, vocab_size - 1)));
  }
  SwapPolicy policy;
  policy.proportion = 0.15;
  policy.rng_seed = 99;
  std::vector<int> swapped = token_swap(tokens, policy, vocab_size);
  size_t changed = 0;
  for (size_t i = 0; i < n; ++i) {
    if (swapped[i] != tokens[i]) ++changed;
    CHECK(swapped[i] >= vocab::kFirstContentId);
  }
  const double fraction = static_cast<double>(changed) / static_cast<double>(n);
  CHECK(fraction > 0.14);
  CHECK(fraction < 0.16);
}

TEST_CASE("token swap deterministic per seed") {
  std::vector<int> tokens;
  for (int i = 0; i < 50; ++i) tokens.push_back(5 + i % 40);
  SwapPolicy policy;
  policy.proportion = 0.3;
  policy.rng_seed = 11;
  CHECK(token_swap(tokens, policy, 64) == token_swap(tokens, policy, 64));
  SwapPolicy other = policy;
  other.rng_seed = 12;
  CHECK(token_swap(tokens, policy, 64) != token_swap(tokens, other, 64));
}

TEST_CASE("token swap rejects p outside the unit interval") {
  SwapPolicy policy;
  policy.proportion = 1.5;
  std::vector<int> tokens{5};
  CHECK_THROWS_AS(token_swap(tokens, policy, 64), ValueError);
}

TEST_CASE("grad_check_function exact on a quadratic") {
  // f(x) = sum (x_i - i)^2, gradient 2(x_i - i).
  std::vector<double> params{0.5, -1.0, 2.0};
  std::vector<double> analytic(3);
  for (int i = 0; i < 3; ++i) analytic[static_cast<size_t>(i)] = 2.0 * (params[static_cast<size_t>(i)] - i);
  auto f = [](std::span<const double> p) {
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - static_cast<double>(i);
      sum += d * d;
    }
    return sum;
  };
  auto report = grad_check_function(f, params, analytic, 1e-5);
  CHECK(report.max_rel_error < 1e-9);
  CHECK(report.checked == 3);
}

TEST_CASE("analytic ce gradients match finite differences on the toy model") {
  auto report = grad_check_ce(RescorerConfig::toy(), 5);
  INFO("worst tensor: ", report.worst_tensor);
  CHECK(report.max_rel_error < 1e-5);
  CHECK(report.checked == count_params(RescorerConfig::toy()));
}

TEST_CASE("analytic mwer gradients match finite differences on the toy model") {
  auto report = grad_check_mwer(RescorerConfig::toy(), 6);
  INFO("worst tensor: ", report.worst_tensor);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("toy task generation is deterministic and well formed") {
  ToyTaskSpec spec;
  spec.seed = 42;
  ToyTask a = make_toy_task(spec, 8, 4);
  ToyTask b = make_toy_task(spec, 8, 4);
  CHECK(a.train.size() == 8);
  CHECK(a.dev.size() == 4);
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].uid == b.train[i].uid);
    CHECK(a.train[i].features.data == b.train[i].features.data);
    CHECK(a.train[i].hyps.size() == 4);
    for (size_t h = 0; h < 4; ++h) {
      CHECK(a.train[i].hyps[h].tokens == b.train[i].hyps[h].tokens);
      CHECK(a.train[i].hyps[h].first_pass_log_prob == b.train[i].hyps[h].first_pass_log_prob);
      CHECK(!a.train[i].hyps[h].tokens.empty());
    }
    CHECK(a.train[i].features.shape[0] ==
          spec.frames_per_token * static_cast<int>(a.train[i].reference_words.size()));
  }
}

TEST_CASE("short two-stage training improves over the stub") {
  // Reduced sizes keep the unit suite fast; the acceptance run uses the
  // full defaults.
  ToyTaskSpec task;
  task.seed = 9;
  TrainOptions opts;
  opts.train_utts = 96;
  opts.dev_utts = 32;
  opts.epochs_ce = 10;
  opts.epochs_mwer = 3;
  opts.seed = 9;
  TrainResult result = train_toy(task, RescorerConfig::toy(), opts);
  REQUIRE(result.dev_ce_per_epoch.size() == 10);
  for (int e = 1; e < 5; ++e) {
    CHECK(result.dev_ce_per_epoch[static_cast<size_t>(e)] <
          result.dev_ce_per_epoch[static_cast<size_t>(e - 1)]);
  }
  CHECK(result.mwer_end_expected_errors < result.mwer_start_expected_errors);
  CHECK(result.final_dev_wer < result.first_pass_dev_wer);
}

TEST_CASE("untrained weights rank by first pass when second pass disabled") {
  ToyTaskSpec spec;
  spec.seed = 3;
  ToyTask task = make_toy_task(spec, 1, 12);
  Model model{RescorerConfig::toy(), init_weights(RescorerConfig::toy(), 3)};
  // Ranking by first-pass only must reproduce the stub's top-1 WER exactly.
  const double stub_wer = top1_wer(model, task.dev, 1.0, false);
  std::vector<WerStats> stats;
  for (const auto& list : task.dev) {
    int best = 0;
    for (size_t h = 1; h < list.hyps.size(); ++h) {
      if (list.hyps[h].first_pass_log_prob > list.hyps[static_cast<size_t>(best)].first_pass_log_prob) {
        best = static_cast<int>(h);
      }
    }
    stats.push_back(word_errors(list.reference_words,
                                tokens_to_words(std::span<const int>(
                                    list.hyps[static_cast<size_t>(best)].tokens))));
  }
  CHECK(stub_wer == corpus_wer(stats));
}

TEST_SUITE_END();
