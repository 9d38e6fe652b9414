#include "trsc/io.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>

#include "json.hpp"
#include "trsc/rng.h"

namespace trsc {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// --------------------------- byte plumbing ---------------------------

void append_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  append_u32(buf, bits);
}

struct Cursor {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw IoError(std::string("truncated weight file while reading ") + what);
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]);
    }
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

// --------------------------- config block ---------------------------

enum ConfigTag : uint32_t {
  kTagNumLayers = 1,
  kTagDModel = 2,
  kTagDff = 3,
  kTagNumHeads = 4,
  kTagVocabSize = 5,
  kTagEncInDim = 6,
  kTagSelfAttentionMode = 7,
  kTagMaxSeqLen = 8,
  kTagCrossLayers = 9,
};

void append_field(std::string& buf, uint32_t tag, const std::vector<uint32_t>& values) {
  append_u32(buf, tag);
  append_u32(buf, static_cast<uint32_t>(values.size()));
  for (uint32_t v : values) append_u32(buf, v);
}

void append_config(std::string& buf, const RescorerConfig& cfg) {
  append_u32(buf, 9);  // field count
  append_field(buf, kTagNumLayers, {static_cast<uint32_t>(cfg.num_layers)});
  append_field(buf, kTagDModel, {static_cast<uint32_t>(cfg.d_model)});
  append_field(buf, kTagDff, {static_cast<uint32_t>(cfg.d_ff)});
  append_field(buf, kTagNumHeads, {static_cast<uint32_t>(cfg.num_heads)});
  append_field(buf, kTagVocabSize, {static_cast<uint32_t>(cfg.vocab_size)});
  append_field(buf, kTagEncInDim, {static_cast<uint32_t>(cfg.enc_in_dim)});
  append_field(buf, kTagSelfAttentionMode,
               {cfg.self_attention_mode == SelfAttentionMode::kCausal ? 0u : 1u});
  append_field(buf, kTagMaxSeqLen, {static_cast<uint32_t>(cfg.max_seq_len)});
  std::vector<uint32_t> cross;
  for (int l : cfg.cross_attention_layers) cross.push_back(static_cast<uint32_t>(l));
  append_field(buf, kTagCrossLayers, cross);
}

RescorerConfig parse_config(Cursor& cur) {
  RescorerConfig cfg;
  cfg.cross_attention_layers.clear();
  const uint32_t fields = cur.u32("config field count");
  for (uint32_t f = 0; f < fields; ++f) {
    const uint32_t tag = cur.u32("config tag");
    const uint32_t count = cur.u32("config value count");
    std::vector<uint32_t> values;
    for (uint32_t i = 0; i < count; ++i) values.push_back(cur.u32("config value"));
    auto single = [&]() -> uint32_t {
      if (values.size() != 1) {
        throw IoError("config tag " + std::to_string(tag) + " expects one value, got " +
                      std::to_string(values.size()));
      }
      return values[0];
    };
    switch (tag) {
      case kTagNumLayers: cfg.num_layers = static_cast<int>(single()); break;
      case kTagDModel: cfg.d_model = static_cast<int>(single()); break;
      case kTagDff: cfg.d_ff = static_cast<int>(single()); break;
      case kTagNumHeads: cfg.num_heads = static_cast<int>(single()); break;
      case kTagVocabSize: cfg.vocab_size = static_cast<int>(single()); break;
      case kTagEncInDim: cfg.enc_in_dim = static_cast<int>(single()); break;
      case kTagSelfAttentionMode:
        cfg.self_attention_mode =
            single() == 0 ? SelfAttentionMode::kCausal : SelfAttentionMode::kFullContext;
        break;
      case kTagMaxSeqLen: cfg.max_seq_len = static_cast<int>(single()); break;
      case kTagCrossLayers:
        for (uint32_t v : values) cfg.cross_attention_layers.insert(static_cast<int>(v));
        break;
      default:
        throw IoError("unknown config tag " + std::to_string(tag) + " in weight file");
    }
  }
  return cfg;
}

void atomic_write(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void save_weights(const std::string& path, const RescorerConfig& cfg, const ModelWeights& w) {
  validate_weights(cfg, w);
  std::string buf;
  buf += "TRSC";
  append_u32(buf, kWeightFileVersion);
  append_config(buf, cfg);

  uint32_t tensor_count = 0;
  for_each_tensor(w, [&](const std::string&, const Tensor&) { ++tensor_count; });
  append_u32(buf, tensor_count);
  for_each_tensor(w, [&](const std::string& name, const Tensor& t) {
    append_u32(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    append_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int dim : t.shape) append_u32(buf, static_cast<uint32_t>(dim));
    for (float v : t.data) append_f32(buf, v);
  });
  atomic_write(path, buf);
}

Model load_weights(const std::string& path) {
  const std::string buf = read_file(path);
  Cursor cur{buf};
  const std::string magic = cur.bytes(4, "magic");
  if (magic != "TRSC") throw IoError("bad magic in " + path + ": not a TRSC weight file");
  const uint32_t version = cur.u32("version");
  if (version != kWeightFileVersion) {
    throw IoError("weight file version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kWeightFileVersion) + ")");
  }
  RescorerConfig cfg = parse_config(cur);

  std::map<std::string, Tensor> tensors;
  const uint32_t count = cur.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = cur.u32("tensor name length");
    const std::string name = cur.bytes(name_len, "tensor name");
    const uint32_t rank = cur.u32("tensor rank");
    if (rank < 1 || rank > 3) {
      throw IoError("tensor " + name + " has unsupported rank " + std::to_string(rank));
    }
    std::vector<int> shape;
    size_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      const uint32_t dim = cur.u32("tensor dim");
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<float> data(numel);
    cur.need(numel * 4, "tensor data");
    for (size_t j = 0; j < numel; ++j) data[j] = cur.f32("tensor data");
    if (tensors.count(name) > 0) {
      throw IoError("duplicate tensor name '" + name + "' in " + path);
    }
    tensors.emplace(name, Tensor::from(std::move(shape), std::move(data)));
  }
  if (cur.pos != buf.size()) {
    throw IoError("trailing bytes after tensor table in " + path);
  }

  cfg.validate();
  ModelWeights w = make_zero_weights<float>(cfg);
  for_each_tensor(w, [&](const std::string& name, Tensor& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ConfigError("weight file " + path + " is missing tensor '" + name + "'");
    }
    t = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty()) {
    const std::string& name = tensors.begin()->first;
    if (name.find("/cross/") != std::string::npos ||
        name.find("ln_cross") != std::string::npos) {
      throw ConfigError("weight file " + path + " carries orphan cross-attention tensor '" +
                        name + "' for a self-decoder layer");
    }
    throw ConfigError("weight file " + path + " carries unexpected tensor '" + name + "'");
  }
  return build_model(std::move(cfg), std::move(w));
}

Tensor load_feature_file(const std::string& path) {
  const std::string buf = read_file(path);
  Cursor cur{buf};
  const uint32_t frames = cur.u32("feature frame count");
  const uint32_t dim = cur.u32("feature dim");
  const size_t numel = static_cast<size_t>(frames) * dim;
  cur.need(numel * 4, "feature data");
  std::vector<float> data(numel);
  for (size_t i = 0; i < numel; ++i) data[i] = cur.f32("feature data");
  if (cur.pos != buf.size()) throw IoError("trailing bytes in feature file " + path);
  return Tensor::from({static_cast<int>(frames), static_cast<int>(dim)}, std::move(data));
}

void write_feature_file(const std::string& path, const Tensor& features) {
  detail::require_2d(features, "feature tensor");
  std::string buf;
  append_u32(buf, static_cast<uint32_t>(features.shape[0]));
  append_u32(buf, static_cast<uint32_t>(features.shape[1]));
  for (float v : features.data) append_f32(buf, v);
  atomic_write(path, buf);
}

Tensor synthetic_features(const std::string& spec) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) != 0) {
    throw ParseError("synthetic feature spec must start with 'synthetic:', got '" + spec + "'");
  }
  uint64_t seed = 0;
  int frames = -1, dim = -1;
  bool have_seed = false;
  std::stringstream ss(spec.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw ParseError("malformed synthetic feature field '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "seed") {
        seed = std::stoull(value);
        have_seed = true;
      } else if (key == "t") {
        frames = std::stoi(value);
      } else if (key == "dim") {
        dim = std::stoi(value);
      } else {
        throw ParseError("unknown synthetic feature key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ParseError("bad value '" + value + "' for synthetic feature key '" + key + "'");
    }
  }
  if (!have_seed || frames < 1 || dim < 1) {
    throw ParseError("synthetic feature spec needs seed, t >= 1 and dim >= 1: '" + spec + "'");
  }
  Rng rng(seed);
  Tensor t = Tensor::zeros({frames, dim});
  for (float& v : t.data) v = static_cast<float>(rng.gaussian());
  return t;
}

// --------------------------- n-best files ---------------------------

NBestReader::NBestReader(const std::string& path) : in_(path) {
  if (!in_) throw IoError("cannot open n-best file " + path);
  dir_ = fs::path(path).parent_path().string();
}

std::optional<NBestList> NBestReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++line_no_;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("n-best line " + std::to_string(line_no_) + ": " + e.what());
    }
    auto fail = [&](const std::string& msg) -> ParseError {
      return ParseError("n-best line " + std::to_string(line_no_) + ": " + msg);
    };
    if (!record.is_object()) throw fail("record is not a JSON object");
    for (const auto& [key, value] : record.items()) {
      (void)value;
      if (key != "uid" && key != "features" && key != "hyps" && key != "ref") {
        throw fail("unknown field '" + key + "'");
      }
    }
    if (!record.contains("uid") || !record["uid"].is_string()) {
      throw fail("missing string field 'uid'");
    }
    if (!record.contains("features") || !record["features"].is_string()) {
      throw fail("missing string field 'features'");
    }
    if (!record.contains("hyps") || !record["hyps"].is_array() || record["hyps"].empty()) {
      throw fail("missing non-empty array field 'hyps'");
    }
    NBestList list;
    list.uid = record["uid"].get<std::string>();
    const std::string features = record["features"].get<std::string>();
    if (features.rfind("synthetic:", 0) == 0) {
      list.features = synthetic_features(features);
    } else {
      fs::path p(features);
      if (p.is_relative() && !dir_.empty()) p = fs::path(dir_) / p;
      list.features = load_feature_file(p.string());
    }
    for (const auto& hyp_json : record["hyps"]) {
      if (!hyp_json.is_object()) throw fail("hypothesis is not an object");
      for (const auto& [key, value] : hyp_json.items()) {
        (void)value;
        if (key != "tokens" && key != "score") throw fail("unknown field '" + key + "'");
      }
      if (!hyp_json.contains("tokens") || !hyp_json["tokens"].is_array()) {
        throw fail("hypothesis missing array field 'tokens'");
      }
      if (!hyp_json.contains("score") || !hyp_json["score"].is_number()) {
        throw fail("hypothesis missing numeric field 'score'");
      }
      Hypothesis hyp;
      for (const auto& tok : hyp_json["tokens"]) {
        if (!tok.is_number_unsigned()) throw fail("token ids must be unsigned integers");
        hyp.tokens.push_back(tok.get<int>());
      }
      hyp.first_pass_log_prob = hyp_json["score"].get<double>();
      list.hyps.push_back(std::move(hyp));
    }
    if (record.contains("ref")) {
      if (!record["ref"].is_string()) throw fail("'ref' must be a string of words");
      std::stringstream ss(record["ref"].get<std::string>());
      std::string word;
      while (ss >> word) list.reference_words.push_back(word);
    }
    return list;
  }
  return std::nullopt;
}

std::vector<NBestList> read_nbest_file(const std::string& path) {
  NBestReader reader(path);
  std::vector<NBestList> lists;
  while (auto list = reader.next()) lists.push_back(std::move(*list));
  return lists;
}

void write_nbest_file(const std::string& path, const std::vector<NBestList>& lists,
                      const std::string& features_dir) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (size_t i = 0; i < lists.size(); ++i) {
    const auto& list = lists[i];
    const std::string feature_name = list.uid + ".f32";
    write_feature_file((fs::path(features_dir) / feature_name).string(), list.features);
    json record;
    record["uid"] = list.uid;
    record["features"] = feature_name;
    json hyps = json::array();
    for (const auto& hyp : list.hyps) {
      json h;
      h["tokens"] = hyp.tokens;
      h["score"] = hyp.first_pass_log_prob;
      hyps.push_back(std::move(h));
    }
    record["hyps"] = std::move(hyps);
    if (!list.reference_words.empty()) {
      std::string ref;
      for (size_t w = 0; w < list.reference_words.size(); ++w) {
        if (w > 0) ref += ' ';
        ref += list.reference_words[w];
      }
      record["ref"] = ref;
    }
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("short write to " + path);
}

// --------------------------- result CSVs ---------------------------

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_rescore_header(std::ostream& out) {
  out << "uid,hyp_index,first_pass,second_pass,combined,rank\n";
}

void write_rescore_rows(std::ostream& out, const NBestList& nbest, const RescoreResult& result) {
  std::vector<int> rank_of(nbest.hyps.size());
  for (size_t pos = 0; pos < result.ranking.size(); ++pos) {
    rank_of[static_cast<size_t>(result.ranking[pos])] = static_cast<int>(pos) + 1;
  }
  for (size_t h = 0; h < nbest.hyps.size(); ++h) {
    out << nbest.uid << ',' << h << ',' << format_double(nbest.hyps[h].first_pass_log_prob)
        << ',' << format_double(result.second_pass_log_prob[h]) << ','
        << format_double(result.combined_score[h]) << ',' << rank_of[h] << '\n';
  }
}

std::vector<std::pair<std::string, int>> read_top1_from_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file " + path);
  std::vector<std::pair<std::string, int>> top1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::stringstream ss(line);
    std::string uid, hyp_index, first, second, combined, rank;
    if (!std::getline(ss, uid, ',') || !std::getline(ss, hyp_index, ',') ||
        !std::getline(ss, first, ',') || !std::getline(ss, second, ',') ||
        !std::getline(ss, combined, ',') || !std::getline(ss, rank, ',')) {
      throw ParseError("results line " + std::to_string(line_no) + ": expected 6 columns");
    }
    try {
      if (std::stoi(rank) == 1) top1.emplace_back(uid, std::stoi(hyp_index));
    } catch (const std::invalid_argument&) {
      throw ParseError("results line " + std::to_string(line_no) + ": bad integer");
    }
  }
  return top1;
}

std::vector<std::string> load_piece_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open piece table " + path);
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) pieces.push_back(line);
  return pieces;
}

std::vector<std::string> detokenize(std::span<const int> tokens,
                                    const std::vector<std::string>* pieces) {
  const std::string marker = "▁";  // word-initial piece marker
  std::vector<std::string> words;
  for (int id : tokens) {
    std::string piece;
    if (pieces != nullptr) {
      if (id < 0 || id >= static_cast<int>(pieces->size())) {
        throw IndexError("token id " + std::to_string(id) + " outside piece table of size " +
                         std::to_string(pieces->size()));
      }
      piece = (*pieces)[static_cast<size_t>(id)];
    } else {
      piece = marker + "t" + std::to_string(id);
    }
    if (piece.rfind(marker, 0) == 0) {
      words.push_back(piece.substr(marker.size()));
    } else if (words.empty()) {
      words.push_back(piece);
    } else {
      words.back() += piece;
    }
  }
  return words;
}

}  // namespace trsc
