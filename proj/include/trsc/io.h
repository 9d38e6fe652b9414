#pragma once

#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "trsc/scoring.h"

namespace trsc {

// ------------------------------------------------------------------
// Weight files. Layout (all integers little-endian):
//   magic "TRSC" | version u32 | config block | tensor table
// config block: u32 field count, then per field {u32 tag, u32 count,
//   u32 value x count}. tensor table: u32 count, then per tensor
//   {u32 name length, UTF-8 name, u32 rank, u32 dims x rank, f32 data}.
// ------------------------------------------------------------------

inline constexpr uint32_t kWeightFileVersion = 1;

// Atomic (write-then-rename) save; round trips are bit-exact.
void save_weights(const std::string& path, const RescorerConfig& cfg, const ModelWeights& w);

// Loads and validates against the build rules (shape checks, orphan
// cross-attention tensors on self-decoder layers, duplicates).
Model load_weights(const std::string& path);

// ------------------------------------------------------------------
// Raw feature files: u32 T | u32 dim | T*dim f32 little-endian.
// ------------------------------------------------------------------

Tensor load_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const Tensor& features);

// "synthetic:seed=S,t=T,dim=D" -> deterministic standard-normal features.
Tensor synthetic_features(const std::string& spec);

// ------------------------------------------------------------------
// N-best files: one strict JSON record per line:
//   {"uid": ..., "features": <path or synthetic spec>,
//    "hyps": [{"tokens": [...], "score": ...}, ...], "ref": "words"}
// Unknown fields are rejected naming the offending key. Relative feature
// paths resolve against the n-best file's directory.
// ------------------------------------------------------------------

class NBestReader {
 public:
  explicit NBestReader(const std::string& path);

  // One record per call; std::nullopt at end of file. Throws ParseError
  // with the line number on malformed records.
  std::optional<NBestList> next();

 private:
  std::ifstream in_;
  std::string dir_;
  int line_no_ = 0;
};

std::vector<NBestList> read_nbest_file(const std::string& path);
void write_nbest_file(const std::string& path, const std::vector<NBestList>& lists,
                      const std::string& features_dir);

// ------------------------------------------------------------------
// Result CSVs
// ------------------------------------------------------------------

void write_rescore_header(std::ostream& out);
void write_rescore_rows(std::ostream& out, const NBestList& nbest, const RescoreResult& result);

// uid -> index of the rank-1 hypothesis.
std::vector<std::pair<std::string, int>> read_top1_from_results_csv(const std::string& path);

// Word-piece table: line i holds the piece for id i. Pieces starting with
// the marker begin a new word.
std::vector<std::string> load_piece_table(const std::string& path);
std::vector<std::string> detokenize(std::span<const int> tokens,
                                    const std::vector<std::string>* pieces);

std::string format_double(double v);

}  // namespace trsc
