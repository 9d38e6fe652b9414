#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trsc/layers.h"
#include "trsc/rng.h"

namespace trsc {

// Reserved word-piece ids shared by the whole pipeline.
namespace vocab {
inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kBlankId = 4;
inline constexpr int kFirstContentId = 5;
}  // namespace vocab

enum class SelfAttentionMode { kCausal, kFullContext };

struct RescorerConfig {
  int num_layers = 4;
  std::set<int> cross_attention_layers = {1, 3};  // 1-based layer indices
  int d_model = 640;
  int d_ff = 2560;
  int num_heads = 8;
  int vocab_size = 4096;
  int enc_in_dim = 512;
  SelfAttentionMode self_attention_mode = SelfAttentionMode::kCausal;
  int max_seq_len = 64;

  // The production-size configuration: 4 layers with cross-attention on the
  // 1st and 3rd, d_model 640, d_ff 2560, 8 heads, 4096 word pieces.
  static RescorerConfig paper();
  static RescorerConfig paper_4cross();
  // Small configuration for fast tests and gradient checks.
  static RescorerConfig toy();
  // Same layer structure as paper() at reduced width, for slower but more
  // representative gradient checks.
  static RescorerConfig paper_scaled();

  void validate() const;  // throws ConfigError
  bool has_cross_attention(int layer_1based) const {
    return cross_attention_layers.count(layer_1based) > 0;
  }
  // Hidden width of the 2-layer additional-encoder projection stack.
  int enc_hidden_dim() const { return enc_in_dim; }
};

template <class T>
struct DecoderLayerWeightsT {
  AttentionWeightsT<T> self_attn;
  LayerNormParamsT<T> ln_self;
  std::optional<AttentionWeightsT<T>> cross_attn;
  std::optional<LayerNormParamsT<T>> ln_cross;
  FeedForwardWeightsT<T> ffn;
  LayerNormParamsT<T> ln_ffn;
};

// Two-layer projection stack adapting frozen first-pass encoder features to
// the rescorer width.
template <class T>
struct AdditionalEncoderWeightsT {
  TensorT<T> w1;  // enc_in x enc_hidden
  TensorT<T> b1;  // enc_hidden
  TensorT<T> w2;  // enc_hidden x d_model
  TensorT<T> b2;  // d_model
};

using AdditionalEncoderWeights = AdditionalEncoderWeightsT<float>;

// Every tensor implied by a RescorerConfig: embeddings (untied), the decoder
// stack, and the additional encoder that adapts first-pass features.
template <class T>
struct ModelWeightsT {
  TensorT<T> token_embedding;  // V x d_model
  TensorT<T> output_proj_w;    // d_model x V
  TensorT<T> output_proj_b;    // V
  std::vector<DecoderLayerWeightsT<T>> layers;
  AdditionalEncoderWeightsT<T> enc;
};

using ModelWeights = ModelWeightsT<float>;
using DecoderLayerWeights = DecoderLayerWeightsT<float>;

// Visits every tensor in canonical order with a stable name. The order and
// names double as the weight-file layout and the SGD/gradient pairing.
template <class T, class Fn>
void for_each_tensor(ModelWeightsT<T>& w, Fn&& fn) {
  fn(std::string("token_embedding"), w.token_embedding);
  fn(std::string("output_proj/w"), w.output_proj_w);
  fn(std::string("output_proj/b"), w.output_proj_b);
  fn(std::string("enc/w1"), w.enc.w1);
  fn(std::string("enc/b1"), w.enc.b1);
  fn(std::string("enc/w2"), w.enc.w2);
  fn(std::string("enc/b2"), w.enc.b2);
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1) + "/";
    auto& layer = w.layers[l];
    auto visit_attention = [&](const std::string& name, AttentionWeightsT<T>& a) {
      fn(prefix + name + "/wq", a.w_q);
      fn(prefix + name + "/wk", a.w_k);
      fn(prefix + name + "/wv", a.w_v);
      fn(prefix + name + "/wo", a.w_o);
      fn(prefix + name + "/bq", a.b_q);
      fn(prefix + name + "/bk", a.b_k);
      fn(prefix + name + "/bv", a.b_v);
      fn(prefix + name + "/bo", a.b_o);
    };
    visit_attention("self", layer.self_attn);
    fn(prefix + "ln_self/gamma", layer.ln_self.gamma);
    fn(prefix + "ln_self/beta", layer.ln_self.beta);
    if (layer.cross_attn.has_value()) {
      visit_attention("cross", *layer.cross_attn);
      fn(prefix + "ln_cross/gamma", layer.ln_cross->gamma);
      fn(prefix + "ln_cross/beta", layer.ln_cross->beta);
    }
    fn(prefix + "ffn/w1", layer.ffn.w1);
    fn(prefix + "ffn/b1", layer.ffn.b1);
    fn(prefix + "ffn/w2", layer.ffn.w2);
    fn(prefix + "ffn/b2", layer.ffn.b2);
    fn(prefix + "ln_ffn/gamma", layer.ln_ffn.gamma);
    fn(prefix + "ln_ffn/beta", layer.ln_ffn.beta);
  }
}

template <class T, class Fn>
void for_each_tensor(const ModelWeightsT<T>& w, Fn&& fn) {
  for_each_tensor(const_cast<ModelWeightsT<T>&>(w),
                  [&](const std::string& name, TensorT<T>& t) {
                    fn(name, static_cast<const TensorT<T>&>(t));
                  });
}

// Allocates every tensor at its config-implied shape, zero filled.
template <class T>
ModelWeightsT<T> make_zero_weights(const RescorerConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model, v = cfg.vocab_size, ff = cfg.d_ff;
  const int eh = cfg.enc_hidden_dim();
  ModelWeightsT<T> w;
  w.token_embedding = TensorT<T>::zeros({v, d});
  w.output_proj_w = TensorT<T>::zeros({d, v});
  w.output_proj_b = TensorT<T>::zeros({v});
  w.enc.w1 = TensorT<T>::zeros({cfg.enc_in_dim, eh});
  w.enc.b1 = TensorT<T>::zeros({eh});
  w.enc.w2 = TensorT<T>::zeros({eh, d});
  w.enc.b2 = TensorT<T>::zeros({d});
  w.layers.resize(static_cast<size_t>(cfg.num_layers));
  auto make_attention = [&]() {
    AttentionWeightsT<T> a;
    a.w_q = TensorT<T>::zeros({d, d});
    a.w_k = TensorT<T>::zeros({d, d});
    a.w_v = TensorT<T>::zeros({d, d});
    a.w_o = TensorT<T>::zeros({d, d});
    a.b_q = TensorT<T>::zeros({d});
    a.b_k = TensorT<T>::zeros({d});
    a.b_v = TensorT<T>::zeros({d});
    a.b_o = TensorT<T>::zeros({d});
    return a;
  };
  auto make_norm = [&]() {
    LayerNormParamsT<T> n;
    n.gamma = TensorT<T>::zeros({d});
    n.beta = TensorT<T>::zeros({d});
    return n;
  };
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& layer = w.layers[static_cast<size_t>(l)];
    layer.self_attn = make_attention();
    layer.ln_self = make_norm();
    if (cfg.has_cross_attention(l + 1)) {
      layer.cross_attn = make_attention();
      layer.ln_cross = make_norm();
    }
    layer.ffn.w1 = TensorT<T>::zeros({d, ff});
    layer.ffn.b1 = TensorT<T>::zeros({ff});
    layer.ffn.w2 = TensorT<T>::zeros({ff, d});
    layer.ffn.b2 = TensorT<T>::zeros({d});
    layer.ln_ffn = make_norm();
  }
  return w;
}

// Xavier-style init for projections, unit gains for the norms.
ModelWeights init_weights(const RescorerConfig& cfg, uint64_t seed);

// Validated immutable pairing of config and weights.
struct Model {
  RescorerConfig config;
  ModelWeights weights;
};

// Checks every tensor implied by the config: shapes, missing tensors, and
// cross-attention tensors present on a self-decoder layer. Throws
// ConfigError/DimensionError naming the offending tensor.
void validate_weights(const RescorerConfig& cfg, const ModelWeights& weights);

Model build_model(RescorerConfig cfg, ModelWeights weights);

// Exact number of weight/bias/norm scalars implied by the config.
int64_t count_params(const RescorerConfig& cfg);

// Multiply-accumulate count on the token path for scoring one hypothesis of
// hyp_len word pieces (hyp_len + 1 decoder positions: SOS prefix through the
// EOS prediction). Encoder-side cross-attention K/V projections and the
// additional encoder are amortized per utterance and excluded; attention
// dot products are excluded.
int64_t estimate_flops(const RescorerConfig& cfg, int hyp_len);

// e = w2 * relu(w1 * features + b1) + b2, mapping enc_in_dim frames to
// d_model.
template <class T>
TensorT<T> additional_encoder_forward(const TensorT<T>& features,
                                      const AdditionalEncoderWeightsT<T>& w,
                                      ThreadPool* pool = nullptr,
                                      const QuantizedMatrix* q_w1 = nullptr,
                                      const QuantizedMatrix* q_w2 = nullptr,
                                      TensorT<T>* pre_activation = nullptr) {
  if (features.rank() != 2 || features.shape[1] != w.w1.shape[0]) {
    throw DimensionError("additional encoder expects [T x " + std::to_string(w.w1.shape[0]) +
                         "] features, got " + shape_str(features.shape));
  }
  TensorT<T> h = dense(features, w.w1, w.b1, pool, q_w1);
  if (pre_activation != nullptr) *pre_activation = h;
  for (T& x : h.data) x = x > T(0) ? x : T(0);
  return dense(h, w.w2, w.b2, pool, q_w2);
}

// ------------------------------------------------------------------
// int8 mirrors (dynamic range quantization of the dense projections;
// embeddings, biases and norms stay float)
// ------------------------------------------------------------------

struct QuantAttentionWeights {
  QuantizedMatrix w_q, w_k, w_v, w_o;
};

struct QuantLayerWeights {
  QuantAttentionWeights self_attn;
  std::optional<QuantAttentionWeights> cross_attn;
  QuantizedMatrix ffn_w1, ffn_w2;
};

struct QuantModelWeights {
  std::vector<QuantLayerWeights> layers;
  QuantizedMatrix output_proj_w;
  QuantizedMatrix enc_w1, enc_w2;
};

QuantModelWeights quantize_model_weights(const ModelWeights& w);

// ------------------------------------------------------------------
// LSTM baseline sizing
// ------------------------------------------------------------------

struct LstmRescorerConfig {
  int num_layers = 2;
  int hidden = 1280;
  int d_model = 640;  // embedding width
  int vocab_size = 4096;
  int attention_dim = 640;
  int max_seq_len = 64;

  static LstmRescorerConfig baseline();  // production-size default
  static LstmRescorerConfig toy();
  void validate() const;
};

int64_t count_params(const LstmRescorerConfig& cfg);

// Sequential-baseline convention: total parameter count times hyp_len.
int64_t estimate_flops(const LstmRescorerConfig& cfg, int hyp_len);

}  // namespace trsc
