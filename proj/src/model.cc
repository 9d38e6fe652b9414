#include "trsc/model.h"

#include <cmath>

#include "trsc/error.h"

namespace trsc {

RescorerConfig RescorerConfig::paper() {
  return RescorerConfig{};
}

RescorerConfig RescorerConfig::paper_4cross() {
  RescorerConfig cfg;
  cfg.cross_attention_layers = {1, 2, 3, 4};
  return cfg;
}

RescorerConfig RescorerConfig::toy() {
  RescorerConfig cfg;
  cfg.num_layers = 4;
  cfg.cross_attention_layers = {1, 3};
  cfg.d_model = 16;
  cfg.d_ff = 64;
  cfg.num_heads = 2;
  cfg.vocab_size = 64;
  cfg.enc_in_dim = 16;
  cfg.max_seq_len = 40;
  return cfg;
}

RescorerConfig RescorerConfig::paper_scaled() {
  RescorerConfig cfg;
  cfg.num_layers = 4;
  cfg.cross_attention_layers = {1, 3};
  cfg.d_model = 32;
  cfg.d_ff = 128;
  cfg.num_heads = 4;
  cfg.vocab_size = 128;
  cfg.enc_in_dim = 16;
  cfg.max_seq_len = 40;
  return cfg;
}

void RescorerConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (cross_attention_layers.empty()) {
    throw ConfigError("cross_attention_layers must be non-empty");
  }
  for (int l : cross_attention_layers) {
    if (l < 1 || l > num_layers) {
      throw ConfigError("cross-attention layer index " + std::to_string(l) +
                        " outside 1.." + std::to_string(num_layers));
    }
  }
  if (d_model < 2 || d_model % 2 != 0) {
    throw ConfigError("d_model must be a positive even number, got " + std::to_string(d_model));
  }
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (vocab_size <= vocab::kFirstContentId) {
    throw ConfigError("vocab_size must exceed the reserved sentinel ids");
  }
  if (enc_in_dim < 1) throw ConfigError("enc_in_dim must be >= 1");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
}

namespace {

void gaussian_fill(Tensor& t, Rng& rng, double stddev) {
  for (float& v : t.data) v = static_cast<float>(rng.gaussian(0.0, stddev));
}

double xavier_std(int fan_in, int fan_out) {
  return std::sqrt(2.0 / (fan_in + fan_out));
}

}  // namespace

ModelWeights init_weights(const RescorerConfig& cfg, uint64_t seed) {
  ModelWeights w = make_zero_weights<float>(cfg);
  Rng rng(seed);
  // Init in canonical tensor order so streams are reproducible.
  for_each_tensor(w, [&](const std::string& name, Tensor& t) {
    if (name.find("gamma") != std::string::npos) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (name.find("beta") != std::string::npos || name.find("/b") != std::string::npos) {
      std::fill(t.data.begin(), t.data.end(), 0.0f);
    } else if (name == "token_embedding") {
      gaussian_fill(t, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    } else {
      gaussian_fill(t, rng, xavier_std(t.shape[0], t.shape[1]));
    }
  });
  return w;
}

namespace {

void check_shape(const std::string& name, const std::vector<int>& got,
                 const std::vector<int>& want) {
  if (got != want) {
    throw DimensionError("tensor " + name + " has shape " + shape_str(got) + ", expected " +
                         shape_str(want));
  }
}

}  // namespace

void validate_weights(const RescorerConfig& cfg, const ModelWeights& weights) {
  cfg.validate();
  const int d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
  const int eh = cfg.enc_hidden_dim();
  if (static_cast<int>(weights.layers.size()) != cfg.num_layers) {
    throw ConfigError("weights provide " + std::to_string(weights.layers.size()) +
                      " layers, config expects " + std::to_string(cfg.num_layers));
  }
  check_shape("token_embedding", weights.token_embedding.shape, {v, d});
  check_shape("output_proj/w", weights.output_proj_w.shape, {d, v});
  check_shape("output_proj/b", weights.output_proj_b.shape, {v});
  check_shape("enc/w1", weights.enc.w1.shape, {cfg.enc_in_dim, eh});
  check_shape("enc/b1", weights.enc.b1.shape, {eh});
  check_shape("enc/w2", weights.enc.w2.shape, {eh, d});
  check_shape("enc/b2", weights.enc.b2.shape, {d});
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const auto& layer = weights.layers[static_cast<size_t>(l - 1)];
    const std::string prefix = "layer" + std::to_string(l) + "/";
    const bool wants_cross = cfg.has_cross_attention(l);
    if (!wants_cross && (layer.cross_attn.has_value() || layer.ln_cross.has_value())) {
      throw ConfigError("layer " + std::to_string(l) +
                        " is a self-decoder but carries orphan cross-attention tensors");
    }
    if (wants_cross && (!layer.cross_attn.has_value() || !layer.ln_cross.has_value())) {
      throw ConfigError("layer " + std::to_string(l) +
                        " requires cross-attention tensors but they are missing");
    }
    auto check_attention = [&](const std::string& name, const AttentionWeightsT<float>& a) {
      check_shape(prefix + name + "/wq", a.w_q.shape, {d, d});
      check_shape(prefix + name + "/wk", a.w_k.shape, {d, d});
      check_shape(prefix + name + "/wv", a.w_v.shape, {d, d});
      check_shape(prefix + name + "/wo", a.w_o.shape, {d, d});
      check_shape(prefix + name + "/bq", a.b_q.shape, {d});
      check_shape(prefix + name + "/bk", a.b_k.shape, {d});
      check_shape(prefix + name + "/bv", a.b_v.shape, {d});
      check_shape(prefix + name + "/bo", a.b_o.shape, {d});
    };
    check_attention("self", layer.self_attn);
    check_shape(prefix + "ln_self/gamma", layer.ln_self.gamma.shape, {d});
    check_shape(prefix + "ln_self/beta", layer.ln_self.beta.shape, {d});
    if (wants_cross) {
      check_attention("cross", *layer.cross_attn);
      check_shape(prefix + "ln_cross/gamma", layer.ln_cross->gamma.shape, {d});
      check_shape(prefix + "ln_cross/beta", layer.ln_cross->beta.shape, {d});
    }
    check_shape(prefix + "ffn/w1", layer.ffn.w1.shape, {d, ff});
    check_shape(prefix + "ffn/b1", layer.ffn.b1.shape, {ff});
    check_shape(prefix + "ffn/w2", layer.ffn.w2.shape, {ff, d});
    check_shape(prefix + "ffn/b2", layer.ffn.b2.shape, {d});
    check_shape(prefix + "ln_ffn/gamma", layer.ln_ffn.gamma.shape, {d});
    check_shape(prefix + "ln_ffn/beta", layer.ln_ffn.beta.shape, {d});
  }
}

Model build_model(RescorerConfig cfg, ModelWeights weights) {
  validate_weights(cfg, weights);
  return Model{std::move(cfg), std::move(weights)};
}

int64_t count_params(const RescorerConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
  const int64_t eh = cfg.enc_hidden_dim();
  const int64_t attention = 4 * d * d + 4 * d;
  const int64_t norm = 2 * d;
  const int64_t ffn = d * ff + ff + ff * d + d;
  int64_t total = 0;
  total += v * d;          // token embedding
  total += d * v + v;      // output projection (untied)
  total += cfg.enc_in_dim * eh + eh + eh * d + d;  // additional encoder
  total += cfg.num_layers * (attention + norm + ffn + norm);
  total += static_cast<int64_t>(cfg.cross_attention_layers.size()) * (attention + norm);
  return total;
}

int64_t estimate_flops(const RescorerConfig& cfg, int hyp_len) {
  cfg.validate();
  if (hyp_len < 1) throw ConfigError("hyp_len must be >= 1");
  const int64_t d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
  const int64_t n_cross = static_cast<int64_t>(cfg.cross_attention_layers.size());
  int64_t per_position = 0;
  per_position += cfg.num_layers * 4 * d * d;  // self-attention q/k/v/o
  per_position += n_cross * 2 * d * d;         // cross-attention q and o
  per_position += cfg.num_layers * 2 * d * ff; // feed forward
  per_position += d * v;                       // output softmax projection
  return per_position * (static_cast<int64_t>(hyp_len) + 1);
}

QuantModelWeights quantize_model_weights(const ModelWeights& w) {
  QuantModelWeights q;
  q.output_proj_w = quantize_dynamic(w.output_proj_w);
  q.enc_w1 = quantize_dynamic(w.enc.w1);
  q.enc_w2 = quantize_dynamic(w.enc.w2);
  q.layers.resize(w.layers.size());
  auto quantize_attention = [](const AttentionWeights& a) {
    QuantAttentionWeights qa;
    qa.w_q = quantize_dynamic(a.w_q);
    qa.w_k = quantize_dynamic(a.w_k);
    qa.w_v = quantize_dynamic(a.w_v);
    qa.w_o = quantize_dynamic(a.w_o);
    return qa;
  };
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    auto& ql = q.layers[l];
    ql.self_attn = quantize_attention(layer.self_attn);
    if (layer.cross_attn.has_value()) ql.cross_attn = quantize_attention(*layer.cross_attn);
    ql.ffn_w1 = quantize_dynamic(layer.ffn.w1);
    ql.ffn_w2 = quantize_dynamic(layer.ffn.w2);
  }
  return q;
}

LstmRescorerConfig LstmRescorerConfig::baseline() {
  return LstmRescorerConfig{};
}

LstmRescorerConfig LstmRescorerConfig::toy() {
  LstmRescorerConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden = 32;
  cfg.d_model = 16;
  cfg.vocab_size = 64;
  cfg.attention_dim = 16;
  cfg.max_seq_len = 40;
  return cfg;
}

void LstmRescorerConfig::validate() const {
  if (num_layers < 1) throw ConfigError("lstm num_layers must be >= 1");
  if (hidden < 1) throw ConfigError("lstm hidden must be >= 1");
  if (d_model < 1) throw ConfigError("lstm d_model must be >= 1");
  if (attention_dim < 1) throw ConfigError("lstm attention_dim must be >= 1");
  if (vocab_size <= vocab::kFirstContentId) {
    throw ConfigError("vocab_size must exceed the reserved sentinel ids");
  }
}

int64_t count_params(const LstmRescorerConfig& cfg) {
  cfg.validate();
  const int64_t h = cfg.hidden, d = cfg.d_model, v = cfg.vocab_size, a = cfg.attention_dim;
  int64_t total = v * d;  // embedding
  // Layer 1 consumes [embedding ; attention context over d_model-wide e].
  int64_t in = d + d;
  for (int l = 0; l < cfg.num_layers; ++l) {
    total += 4 * h * (in + h) + 4 * h;
    in = h;
  }
  total += h * a + d * a + a;  // additive attention: query proj, key proj, score vector
  total += h * v + v;          // untied output projection
  return total;
}

int64_t estimate_flops(const LstmRescorerConfig& cfg, int hyp_len) {
  if (hyp_len < 1) throw ConfigError("hyp_len must be >= 1");
  return count_params(cfg) * static_cast<int64_t>(hyp_len);
}

}  // namespace trsc
