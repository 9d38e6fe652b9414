#pragma once

#include <span>
#include <string>
#include <vector>

namespace trsc {

struct WerStats {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int reference_word_count = 0;

  int errors() const { return substitutions + insertions + deletions; }
};

// Minimal word-level edit distance (unit costs). Alignment ties are broken
// deterministically: substitution over insertion over deletion.
WerStats word_errors(std::span<const std::string> ref_words,
                     std::span<const std::string> hyp_words);

// Pooled corpus WER: total errors / total reference words.
double corpus_wer(std::span<const WerStats> stats);

}  // namespace trsc
