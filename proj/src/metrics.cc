#include "trsc/metrics.h"

#include <vector>

#include "trsc/error.h"

namespace trsc {

WerStats word_errors(std::span<const std::string> ref_words,
                     std::span<const std::string> hyp_words) {
  const int n = static_cast<int>(ref_words.size());
  const int m = static_cast<int>(hyp_words.size());
  std::vector<int> cost(static_cast<size_t>(n + 1) * (m + 1));
  auto at = [&](int i, int j) -> int& { return cost[static_cast<size_t>(i) * (m + 1) + j]; };
  for (int i = 0; i <= n; ++i) at(i, 0) = i;
  for (int j = 0; j <= m; ++j) at(0, j) = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      const int sub = at(i - 1, j - 1) + (ref_words[static_cast<size_t>(i - 1)] !=
                                                  hyp_words[static_cast<size_t>(j - 1)]
                                              ? 1
                                              : 0);
      const int ins = at(i, j - 1) + 1;  // extra hypothesis word
      const int del = at(i - 1, j) + 1;  // missed reference word
      at(i, j) = std::min(sub, std::min(ins, del));
    }
  }

  WerStats stats;
  stats.reference_word_count = n;
  // Backtrack with the fixed preference order at equal cost.
  int i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool match = ref_words[static_cast<size_t>(i - 1)] ==
                         hyp_words[static_cast<size_t>(j - 1)];
      const int sub = at(i - 1, j - 1) + (match ? 0 : 1);
      if (sub == at(i, j)) {
        if (!match) ++stats.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j - 1) + 1 == at(i, j)) {
      ++stats.insertions;
      --j;
      continue;
    }
    ++stats.deletions;
    --i;
  }
  return stats;
}

double corpus_wer(std::span<const WerStats> stats) {
  long long errors = 0, words = 0;
  for (const auto& s : stats) {
    errors += s.errors();
    words += s.reference_word_count;
  }
  if (words == 0) throw ValueError("corpus_wer undefined: zero reference words");
  return static_cast<double>(errors) / static_cast<double>(words);
}

}  // namespace trsc
