#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "olab/ops.hpp"
#include "olab/tensor.hpp"

namespace olab::models {

// 64 tile tokens (id = Square.index) plus the specials.
struct Vocab {
  static constexpr int kMoveTokens = 64;
  static constexpr int kMask = 64;
  static constexpr int kSep = 65;
  static constexpr int kCls = 66;
  static constexpr int kPad = 67;
  static constexpr int kSize = 68;
};

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 128;  // >= 2*60 + 2
  int d_v = 128;          // visual feature width out of the conv encoder
  int d_visual_in = 0;    // 0: multimodal takes d_v features; >0: external featurizer width
  int conv_channels = 32; // first-stage width
  int conv_stages = 4;
  int image_side = 80;    // conv input render side
  double dropout = 0.1;
  uint64_t seed = 0;

  void validate() const;
  std::string canonical_text() const;
  static ModelConfig from_canonical_text(const std::string& text);
  bool operator==(const ModelConfig&) const = default;

  int visual_in() const { return d_visual_in > 0 ? d_visual_in : d_v; }
};

using ParamMap = std::vector<std::pair<std::string, nn::Tensor>>;

// Pre-LN transformer with a final layer norm. Key-side visibility masking:
// invisible positions are never attended to (additive -1e9 on their key
// column); every position still queries the visible set so masked slots can
// form predictions from context.
struct TransformerStack {
  ModelConfig cfg;
  struct Layer {
    nn::Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    nn::Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  nn::Tensor lnf_g, lnf_b;

  TransformerStack() = default;
  TransformerStack(const ModelConfig& cfg, std::mt19937_64& rng);

  // x: (B,L,D); key_visible: B*L flags; returns n_layers+1 activations,
  // [0] = x, [n_layers] = final-layer-norm output. extra_bias, when given,
  // is a B*L*L additive attention prior shared across heads.
  std::vector<nn::Tensor> forward(const nn::Tensor& x, const std::vector<uint8_t>& key_visible,
                                  bool causal, bool training, std::mt19937_64& rng,
                                  const std::vector<double>* extra_bias = nullptr) const;

  void collect(ParamMap& out, const std::string& prefix) const;
};

// Uniform per-layer activations; layer 0 is the embedding output.
struct HiddenStates {
  int batch = 0;
  int seq_len = 0;
  std::vector<nn::Tensor> layers;  // each (B,L,D)

  int n_layers() const { return static_cast<int>(layers.size()) - 1; }
  // activation vector at (b, pos) of `layer`
  std::vector<double> at(int layer, int b, int pos) const;
};

struct SeqBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;         // batch*seq_len, already MASK/PAD substituted
  std::vector<uint8_t> key_visible;  // batch*seq_len
};

struct SeqOutput {
  HiddenStates hidden;
  nn::Tensor logits;  // (B, L, vocab)
};

// BERT-style bidirectional encoder over [CLS] m_1 .. m_s.
class TextEncoder {
 public:
  TextEncoder(const ModelConfig& cfg, std::mt19937_64& rng);

  SeqOutput forward(const SeqBatch& batch, bool training, std::mt19937_64& rng) const;

  const ModelConfig& config() const { return cfg_; }
  ParamMap named_parameters() const;

 private:
  ModelConfig cfg_;
  nn::Tensor tok_emb_, pos_emb_, lne_g_, lne_b_;
  TransformerStack stack_;
  nn::Tensor head_w_, head_b_;
};

// GPT-style decoder over [CLS] m_1 .. m_{s-1} predicting the next move at
// every position.
class CausalDecoder {
 public:
  CausalDecoder(const ModelConfig& cfg, std::mt19937_64& rng);

  SeqOutput forward(const SeqBatch& batch, bool training, std::mt19937_64& rng) const;

  const ModelConfig& config() const { return cfg_; }
  ParamMap named_parameters() const;

 private:
  ModelConfig cfg_;
  nn::Tensor tok_emb_, pos_emb_, lne_g_, lne_b_;
  TransformerStack stack_;
  nn::Tensor head_w_, head_b_;
};

// Residual conv stack over raw board renders, or a linear stem when the
// input is an external 1200-d featurization. Doubles as the vision-only
// next-move baseline via the 64-way head.
class ResidualConvEncoder {
 public:
  ResidualConvEncoder(const ModelConfig& cfg, std::mt19937_64& rng);

  // images: (B, 3, side, side) pixel values scaled to [0,1].
  nn::Tensor encode(const nn::Tensor& images, bool training, std::mt19937_64& rng) const;
  // features: (B, d_visual_in) external featurizer path.
  nn::Tensor encode_features(const nn::Tensor& features) const;
  nn::Tensor next_move_logits(const nn::Tensor& v) const;  // (B, d_v) -> (B, 64)

  const ModelConfig& config() const { return cfg_; }
  ParamMap named_parameters() const;

 private:
  ModelConfig cfg_;
  struct Stage {
    nn::Tensor conv1_w, conv1_b, n1_g, n1_b;
    nn::Tensor conv2_w, conv2_b, n2_g, n2_b;
    nn::Tensor skip_w, skip_b;  // 1x1 stride-2 projection
  };
  nn::Tensor stem_w_, stem_b_, stem_n_g_, stem_n_b_;
  std::vector<Stage> stages_;
  nn::Tensor proj_w_, proj_b_;  // last stage channels -> d_v
  nn::Tensor feat_w_, feat_b_;  // visual_in -> d_v (linear stem)
  nn::Tensor head_w_, head_b_;  // d_v -> 64

  nn::Tensor channel_norm(const nn::Tensor& x, const nn::Tensor& g, const nn::Tensor& b) const;
};

// One multimodal example row; visual rows are zero at non-image positions.
struct MultimodalBatch {
  int batch = 0;
  int steps = 0;  // padded step count S; layout length is 2S+2
  std::vector<int> move_tokens;        // batch*steps, MASK/PAD substituted
  std::vector<double> visual;          // batch*steps*d_in
  std::vector<uint8_t> text_visible;   // batch*steps
  std::vector<uint8_t> image_visible;  // batch*steps
};

struct MultimodalOutput {
  HiddenStates hidden;
  nn::Tensor logits;       // (B, S, vocab), read at text positions
  nn::Tensor match_logit;  // (B,), from CLS
};

// VisualBERT-style fusion encoder over [CLS] v_1..v_S [SEP] m_1..m_S with
// shared step position indices and a segment embedding per modality.
class MultimodalEncoder {
 public:
  MultimodalEncoder(const ModelConfig& cfg, std::mt19937_64& rng);

  MultimodalOutput forward(const MultimodalBatch& batch, bool training,
                           std::mt19937_64& rng) const;

  const ModelConfig& config() const { return cfg_; }
  ParamMap named_parameters() const;

  // Layout positions for reading activations back out of HiddenStates.
  static int cls_position() { return 0; }
  static int image_position(int step) { return 1 + step; }              // step 0-based
  static int text_position(int steps, int step) { return steps + 2 + step; }

  // Additive attention prior between v_t and m_t (same step, either
  // direction); masked positions still win since -1e9 dominates.
  static constexpr double kSameStepAttnBias = 4.0;

 private:
  ModelConfig cfg_;
  nn::Tensor tok_emb_, pos_emb_, seg_emb_, lne_g_, lne_b_;
  nn::Tensor vis_w_, vis_b_;
  TransformerStack stack_;
  nn::Tensor head_w_, head_b_;
  nn::Tensor match_w_, match_b_;
};

size_t parameter_count(const ParamMap& params);
std::vector<nn::Tensor> parameter_tensors(const ParamMap& params);

}  // namespace olab::models
