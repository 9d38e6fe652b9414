#include "doctest.h"
#include "trsc/error.h"
#include "trsc/metrics.h"
#include "trsc/rng.h"

using namespace trsc;

namespace {

std::vector<std::string> words(std::initializer_list<const char*> list) {
  return {list.begin(), list.end()};
}

// Exhaustive-recursion edit distance, the independent oracle.
int brute_force_distance(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty()) return static_cast<int>(b.size());
  if (b.empty()) return static_cast<int>(a.size());
  const int sub = brute_force_distance(a.subspan(1), b.subspan(1)) + (a[0] != b[0] ? 1 : 0);
  const int del = brute_force_distance(a.subspan(1), b) + 1;
  const int ins = brute_force_distance(a, b.subspan(1)) + 1;
  return std::min(sub, std::min(del, ins));
}

std::vector<std::string> random_words(Rng& rng, int max_len) {
  std::vector<std::string> out;
  const int len = static_cast<int>(rng.uniform_int(0, max_len));
  for (int i = 0; i < len; ++i) {
    out.push_back(std::string(1, static_cast<char>('a' + rng.uniform_int(0, 3))));
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("identical sequences have zero errors") {
  auto r = words({"the", "cat", "sat"});
  WerStats s = word_errors(r, r);
  CHECK(s.errors() == 0);
  CHECK(s.reference_word_count == 3);
}

TEST_CASE("empty reference counts insertions") {
  WerStats s = word_errors({}, words({"a", "b", "c"}));
  CHECK(s.insertions == 3);
  CHECK(s.substitutions == 0);
  CHECK(s.deletions == 0);
  CHECK(s.reference_word_count == 0);
}

TEST_CASE("hand alignment: one substitution plus one insertion") {
  WerStats s = word_errors(words({"the", "cat", "sat"}), words({"the", "hat", "sat", "on"}));
  CHECK(s.errors() == 2);
  CHECK(s.substitutions == 1);
  CHECK(s.insertions == 1);
  CHECK(s.deletions == 0);
}

TEST_CASE("distance matches brute-force oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    auto a = random_words(rng, 6);
    auto b = random_words(rng, 6);
    CHECK(word_errors(a, b).errors() == brute_force_distance(a, b));
  }
}

TEST_CASE("total errors symmetric under swapping arguments") {
  Rng rng(32);
  for (int trial = 0; trial < 40; ++trial) {
    auto a = random_words(rng, 5);
    auto b = random_words(rng, 5);
    WerStats ab = word_errors(a, b);
    WerStats ba = word_errors(b, a);
    CHECK(ab.errors() == ba.errors());
    // Insertions and deletions swap roles.
    CHECK(ab.insertions == ba.deletions);
    CHECK(ab.deletions == ba.insertions);
  }
}

TEST_CASE("triangle inequality") {
  Rng rng(33);
  for (int trial = 0; trial < 40; ++trial) {
    auto a = random_words(rng, 4);
    auto b = random_words(rng, 4);
    auto c = random_words(rng, 4);
    const int ab = word_errors(a, b).errors();
    const int bc = word_errors(b, c).errors();
    const int ac = word_errors(a, c).errors();
    CHECK(ac <= ab + bc);
  }
}

TEST_CASE("corpus wer pools errors over words") {
  CHECK(corpus_wer(std::vector<WerStats>{{0, 0, 0, 7}}) == 0.0);

  std::vector<WerStats> one{{1, 0, 0, 10}};
  CHECK(corpus_wer(one) == doctest::Approx(0.1));

  // Pooling differs from averaging per-utterance rates:
  // 9/10 + 0/90 -> pooled 0.09, averaged 0.45.
  std::vector<WerStats> two{{9, 0, 0, 10}, {0, 0, 0, 90}};
  CHECK(corpus_wer(two) == doctest::Approx(0.09));

  CHECK_THROWS_AS(corpus_wer(std::vector<WerStats>{{0, 0, 0, 0}}), ValueError);
}

TEST_SUITE_END();
