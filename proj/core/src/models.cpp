#include "olab/models.hpp"

#include <cmath>
#include <sstream>

namespace olab::models {

using nn::Shape;
using nn::Tensor;

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor x2 = nn::reshape(x, {-1, x.dim(x.ndim() - 1)});
  return nn::reshape(nn::add(nn::matmul(x2, w), b), std::move(out_shape));
}

Tensor init_weight(Shape shape, std::mt19937_64& rng, double stddev = 0.02) {
  return Tensor::truncated_normal(std::move(shape), stddev, rng, true);
}

Tensor init_conv(int co, int ci, int k, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / (ci * k * k));
  return Tensor::truncated_normal({co, ci, k, k}, stddev, rng, true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || d_v <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (max_seq_len < 2 * 60 + 2) throw ConfigError("max_seq_len must be >= 122");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (conv_stages < 1 || conv_channels < 1) throw ConfigError("conv shape must be positive");
  if (image_side % 8 != 0 || image_side <= 0) throw ConfigError("image_side must be divisible by 8");
}

std::string ModelConfig::canonical_text() const {
  std::ostringstream out;
  out << "d_model=" << d_model << "\nn_layers=" << n_layers << "\nn_heads=" << n_heads
      << "\nd_ff=" << d_ff << "\nmax_seq_len=" << max_seq_len << "\nd_v=" << d_v
      << "\nd_visual_in=" << d_visual_in << "\nconv_channels=" << conv_channels
      << "\nconv_stages=" << conv_stages << "\nimage_side=" << image_side << "\ndropout=";
  out.precision(17);
  out << dropout << "\nseed=" << seed << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_canonical_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "d_model") cfg.d_model = std::stoi(val);
    else if (key == "n_layers") cfg.n_layers = std::stoi(val);
    else if (key == "n_heads") cfg.n_heads = std::stoi(val);
    else if (key == "d_ff") cfg.d_ff = std::stoi(val);
    else if (key == "max_seq_len") cfg.max_seq_len = std::stoi(val);
    else if (key == "d_v") cfg.d_v = std::stoi(val);
    else if (key == "d_visual_in") cfg.d_visual_in = std::stoi(val);
    else if (key == "conv_channels") cfg.conv_channels = std::stoi(val);
    else if (key == "conv_stages") cfg.conv_stages = std::stoi(val);
    else if (key == "image_side") cfg.image_side = std::stoi(val);
    else if (key == "dropout") cfg.dropout = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw ConfigError("unknown config key: " + key);
  }
  return cfg;
}

TransformerStack::TransformerStack(const ModelConfig& cfg_in, std::mt19937_64& rng) : cfg(cfg_in) {
  const int d = cfg.d_model, ff = cfg.d_ff;
  layers.resize(cfg.n_layers);
  for (auto& l : layers) {
    l.ln1_g = ones_param({d});
    l.ln1_b = zeros_param({d});
    l.wq = init_weight({d, d}, rng);
    l.bq = zeros_param({d});
    l.wk = init_weight({d, d}, rng);
    l.bk = zeros_param({d});
    l.wv = init_weight({d, d}, rng);
    l.bv = zeros_param({d});
    l.wo = init_weight({d, d}, rng);
    l.bo = zeros_param({d});
    l.ln2_g = ones_param({d});
    l.ln2_b = zeros_param({d});
    l.w1 = init_weight({d, ff}, rng);
    l.b1 = zeros_param({ff});
    l.w2 = init_weight({ff, d}, rng);
    l.b2 = zeros_param({d});
  }
  lnf_g = ones_param({d});
  lnf_b = zeros_param({d});
}

std::vector<Tensor> TransformerStack::forward(const Tensor& x,
                                              const std::vector<uint8_t>& key_visible,
                                              bool causal, bool training, std::mt19937_64& rng,
                                              const std::vector<double>* extra_bias) const {
  const int B = x.dim(0), L = x.dim(1), D = x.dim(2);
  const int H = cfg.n_heads, hd = D / H;
  if (static_cast<int>(key_visible.size()) != B * L) {
    throw ShapeError("transformer: key_visible size mismatch");
  }
  // Additive attention bias: -1e9 on invisible key columns (and the strict
  // upper triangle when causal), shared across heads.
  if (extra_bias && static_cast<int>(extra_bias->size()) != B * L * L) {
    throw ShapeError("transformer: extra_bias size mismatch");
  }
  std::vector<double> bias(static_cast<size_t>(B) * H * L * L, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      double* m = bias.data() + (static_cast<size_t>(b) * H + h) * L * L;
      if (extra_bias) {
        std::copy_n(extra_bias->data() + static_cast<size_t>(b) * L * L, L * L, m);
      }
      for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
          if (!key_visible[b * L + j] || (causal && j > i)) m[i * L + j] = -1e9;
        }
      }
    }
  }
  Tensor bias_t({B * H, L, L}, std::move(bias));

  std::vector<Tensor> acts;
  acts.reserve(cfg.n_layers + 1);
  acts.push_back(x);
  Tensor h = x;
  const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  for (const auto& l : layers) {
    Tensor ln1 = nn::layer_norm(h, l.ln1_g, l.ln1_b);
    auto heads = [&](const Tensor& t) {
      return nn::reshape(nn::permute(nn::reshape(t, {B, L, H, hd}), {0, 2, 1, 3}), {B * H, L, hd});
    };
    Tensor q = heads(linear(ln1, l.wq, l.bq));
    Tensor k = heads(linear(ln1, l.wk, l.bk));
    Tensor v = heads(linear(ln1, l.wv, l.bv));
    Tensor scores = nn::add(nn::scale(nn::bmm(q, nn::transpose_last2(k)), scl), bias_t);
    Tensor ctx = nn::bmm(nn::softmax(scores), v);
    ctx = nn::reshape(nn::permute(nn::reshape(ctx, {B, H, L, hd}), {0, 2, 1, 3}), {B, L, D});
    Tensor attn_out = linear(ctx, l.wo, l.bo);
    h = nn::add(h, nn::dropout(attn_out, cfg.dropout, rng, training));
    Tensor ln2 = nn::layer_norm(h, l.ln2_g, l.ln2_b);
    Tensor ff = linear(nn::gelu(linear(ln2, l.w1, l.b1)), l.w2, l.b2);
    h = nn::add(h, nn::dropout(ff, cfg.dropout, rng, training));
    acts.push_back(h);
  }
  acts.back() = nn::layer_norm(acts.back(), lnf_g, lnf_b);
  return acts;
}

void TransformerStack::collect(ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = prefix + "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1_g", l.ln1_g);
    out.emplace_back(p + "ln1_b", l.ln1_b);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "bq", l.bq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "bk", l.bk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "bv", l.bv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "bo", l.bo);
    out.emplace_back(p + "ln2_g", l.ln2_g);
    out.emplace_back(p + "ln2_b", l.ln2_b);
    out.emplace_back(p + "w1", l.w1);
    out.emplace_back(p + "b1", l.b1);
    out.emplace_back(p + "w2", l.w2);
    out.emplace_back(p + "b2", l.b2);
  }
  out.emplace_back(prefix + "lnf_g", lnf_g);
  out.emplace_back(prefix + "lnf_b", lnf_b);
}

std::vector<double> HiddenStates::at(int layer, int b, int pos) const {
  if (layer < 0 || layer >= static_cast<int>(layers.size())) {
    throw ContractError("hidden state layer " + std::to_string(layer) + " out of range");
  }
  const Tensor& t = layers[layer];
  const int D = t.dim(2);
  const auto& v = t.values();
  const size_t off = (static_cast<size_t>(b) * t.dim(1) + pos) * D;
  return std::vector<double>(v.begin() + off, v.begin() + off + D);
}

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder::TextEncoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  tok_emb_ = init_weight({Vocab::kSize, cfg_.d_model}, rng);
  pos_emb_ = init_weight({cfg_.max_seq_len, cfg_.d_model}, rng);
  lne_g_ = ones_param({cfg_.d_model});
  lne_b_ = zeros_param({cfg_.d_model});
  stack_ = TransformerStack(cfg_, rng);
  head_w_ = init_weight({cfg_.d_model, Vocab::kSize}, rng);
  head_b_ = zeros_param({Vocab::kSize});
}

namespace {

SeqOutput sequence_forward(const ModelConfig& cfg, const Tensor& tok_emb, const Tensor& pos_emb,
                           const Tensor& lne_g, const Tensor& lne_b,
                           const TransformerStack& stack, const Tensor& head_w,
                           const Tensor& head_b, const SeqBatch& batch, bool causal,
                           bool training, std::mt19937_64& rng) {
  const int B = batch.batch, L = batch.seq_len;
  if (L > cfg.max_seq_len) {
    throw ShapeError("sequence length " + std::to_string(L) + " exceeds max_seq_len");
  }
  if (static_cast<int>(batch.tokens.size()) != B * L ||
      static_cast<int>(batch.key_visible.size()) != B * L) {
    throw ShapeError("sequence batch: tokens/visibility size mismatch");
  }
  Tensor tok = nn::embedding(tok_emb, batch.tokens, {B, L});
  std::vector<int> pos_ids(static_cast<size_t>(B) * L);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) pos_ids[b * L + i] = i;
  }
  Tensor pos = nn::embedding(pos_emb, pos_ids, {B, L});
  Tensor x = nn::layer_norm(nn::add(tok, pos), lne_g, lne_b);
  x = nn::dropout(x, cfg.dropout, rng, training);
  SeqOutput out;
  out.hidden.batch = B;
  out.hidden.seq_len = L;
  out.hidden.layers = stack.forward(x, batch.key_visible, causal, training, rng);
  out.logits = linear(out.hidden.layers.back(), head_w, head_b);
  return out;
}

}  // namespace

SeqOutput TextEncoder::forward(const SeqBatch& batch, bool training, std::mt19937_64& rng) const {
  return sequence_forward(cfg_, tok_emb_, pos_emb_, lne_g_, lne_b_, stack_, head_w_, head_b_,
                          batch, /*causal=*/false, training, rng);
}

ParamMap TextEncoder::named_parameters() const {
  ParamMap out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  out.emplace_back("lne_g", lne_g_);
  out.emplace_back("lne_b", lne_b_);
  stack_.collect(out, "stack.");
  out.emplace_back("head_w", head_w_);
  out.emplace_back("head_b", head_b_);
  return out;
}

// ---------------------------------------------------------------------------
// CausalDecoder

CausalDecoder::CausalDecoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  tok_emb_ = init_weight({Vocab::kSize, cfg_.d_model}, rng);
  pos_emb_ = init_weight({cfg_.max_seq_len, cfg_.d_model}, rng);
  lne_g_ = ones_param({cfg_.d_model});
  lne_b_ = zeros_param({cfg_.d_model});
  stack_ = TransformerStack(cfg_, rng);
  head_w_ = init_weight({cfg_.d_model, Vocab::kSize}, rng);
  head_b_ = zeros_param({Vocab::kSize});
}

SeqOutput CausalDecoder::forward(const SeqBatch& batch, bool training,
                                 std::mt19937_64& rng) const {
  return sequence_forward(cfg_, tok_emb_, pos_emb_, lne_g_, lne_b_, stack_, head_w_, head_b_,
                          batch, /*causal=*/true, training, rng);
}

ParamMap CausalDecoder::named_parameters() const {
  ParamMap out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  out.emplace_back("lne_g", lne_g_);
  out.emplace_back("lne_b", lne_b_);
  stack_.collect(out, "stack.");
  out.emplace_back("head_w", head_w_);
  out.emplace_back("head_b", head_b_);
  return out;
}

// ---------------------------------------------------------------------------
// ResidualConvEncoder

ResidualConvEncoder::ResidualConvEncoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int c0 = cfg_.conv_channels;
  stem_w_ = init_conv(c0, 3, 3, rng);
  stem_b_ = zeros_param({c0});
  stem_n_g_ = ones_param({c0});
  stem_n_b_ = zeros_param({c0});
  int cin = c0;
  for (int s = 0; s < cfg_.conv_stages; ++s) {
    const int cout = std::min(cin * 2, c0 * 8);
    Stage st;
    st.conv1_w = init_conv(cout, cin, 3, rng);
    st.conv1_b = zeros_param({cout});
    st.n1_g = ones_param({cout});
    st.n1_b = zeros_param({cout});
    st.conv2_w = init_conv(cout, cout, 3, rng);
    st.conv2_b = zeros_param({cout});
    st.n2_g = ones_param({cout});
    st.n2_b = zeros_param({cout});
    st.skip_w = init_conv(cout, cin, 1, rng);
    st.skip_b = zeros_param({cout});
    stages_.push_back(std::move(st));
    cin = cout;
  }
  const int final_side = cfg_.image_side >> cfg_.conv_stages;
  const int flat = cin * final_side * final_side;
  proj_w_ = init_weight({flat, cfg_.d_v}, rng, std::sqrt(1.0 / flat));
  proj_b_ = zeros_param({cfg_.d_v});
  feat_w_ = init_weight({cfg_.visual_in(), cfg_.d_v}, rng, std::sqrt(1.0 / cfg_.visual_in()));
  feat_b_ = zeros_param({cfg_.d_v});
  head_w_ = init_weight({cfg_.d_v, Vocab::kMoveTokens}, rng);
  head_b_ = zeros_param({Vocab::kMoveTokens});
}

Tensor ResidualConvEncoder::channel_norm(const Tensor& x, const Tensor& g,
                                         const Tensor& b) const {
  // Per-position normalization across channels; deterministic in eval mode
  // unlike batch statistics.
  Tensor t = nn::permute(x, {0, 2, 3, 1});
  t = nn::layer_norm(t, g, b);
  return nn::permute(t, {0, 3, 1, 2});
}

Tensor ResidualConvEncoder::encode(const Tensor& images, bool training,
                                   std::mt19937_64& rng) const {
  if (images.ndim() != 4 || images.dim(1) != 3) {
    throw ShapeError("conv encode: expected (B,3,H,W), got " + nn::shape_str(images.shape()));
  }
  Tensor h = nn::relu(channel_norm(nn::conv2d(images, stem_w_, stem_b_, 1, 1), stem_n_g_,
                                   stem_n_b_));
  for (const auto& st : stages_) {
    Tensor skip = nn::conv2d(h, st.skip_w, st.skip_b, 2, 0);
    Tensor t = nn::relu(channel_norm(nn::conv2d(h, st.conv1_w, st.conv1_b, 2, 1), st.n1_g,
                                     st.n1_b));
    t = channel_norm(nn::conv2d(t, st.conv2_w, st.conv2_b, 1, 1), st.n2_g, st.n2_b);
    h = nn::relu(nn::add(t, skip));
  }
  // Flatten the final feature map instead of pooling it away: legality is a
  // per-tile property, so the projection must see spatial structure.
  Tensor flat = nn::reshape(h, {h.dim(0), h.dim(1) * h.dim(2) * h.dim(3)});
  Tensor v = linear(nn::dropout(flat, cfg_.dropout, rng, training), proj_w_, proj_b_);
  return v;
}

Tensor ResidualConvEncoder::encode_features(const Tensor& features) const {
  if (features.ndim() != 2 || features.dim(1) != cfg_.visual_in()) {
    throw ShapeError("conv encode_features: expected (B," + std::to_string(cfg_.visual_in()) +
                     ")");
  }
  return linear(features, feat_w_, feat_b_);
}

Tensor ResidualConvEncoder::next_move_logits(const Tensor& v) const {
  return linear(v, head_w_, head_b_);
}

ParamMap ResidualConvEncoder::named_parameters() const {
  ParamMap out;
  out.emplace_back("stem_w", stem_w_);
  out.emplace_back("stem_b", stem_b_);
  out.emplace_back("stem_n_g", stem_n_g_);
  out.emplace_back("stem_n_b", stem_n_b_);
  for (size_t i = 0; i < stages_.size(); ++i) {
    const auto& st = stages_[i];
    const std::string p = "stage" + std::to_string(i) + ".";
    out.emplace_back(p + "conv1_w", st.conv1_w);
    out.emplace_back(p + "conv1_b", st.conv1_b);
    out.emplace_back(p + "n1_g", st.n1_g);
    out.emplace_back(p + "n1_b", st.n1_b);
    out.emplace_back(p + "conv2_w", st.conv2_w);
    out.emplace_back(p + "conv2_b", st.conv2_b);
    out.emplace_back(p + "n2_g", st.n2_g);
    out.emplace_back(p + "n2_b", st.n2_b);
    out.emplace_back(p + "skip_w", st.skip_w);
    out.emplace_back(p + "skip_b", st.skip_b);
  }
  out.emplace_back("proj_w", proj_w_);
  out.emplace_back("proj_b", proj_b_);
  out.emplace_back("feat_w", feat_w_);
  out.emplace_back("feat_b", feat_b_);
  out.emplace_back("head_w", head_w_);
  out.emplace_back("head_b", head_b_);
  return out;
}

// ---------------------------------------------------------------------------
// MultimodalEncoder

MultimodalEncoder::MultimodalEncoder(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  tok_emb_ = init_weight({Vocab::kSize, cfg_.d_model}, rng);
  pos_emb_ = init_weight({cfg_.max_seq_len, cfg_.d_model}, rng);
  seg_emb_ = init_weight({2, cfg_.d_model}, rng);
  lne_g_ = ones_param({cfg_.d_model});
  lne_b_ = zeros_param({cfg_.d_model});
  vis_w_ = init_weight({cfg_.visual_in(), cfg_.d_model}, rng,
                       std::sqrt(1.0 / cfg_.visual_in()));
  vis_b_ = zeros_param({cfg_.d_model});
  stack_ = TransformerStack(cfg_, rng);
  head_w_ = init_weight({cfg_.d_model, Vocab::kSize}, rng);
  head_b_ = zeros_param({Vocab::kSize});
  match_w_ = init_weight({cfg_.d_model, 1}, rng);
  match_b_ = zeros_param({1});
}

MultimodalOutput MultimodalEncoder::forward(const MultimodalBatch& batch, bool training,
                                            std::mt19937_64& rng) const {
  const int B = batch.batch, S = batch.steps, L = 2 * S + 2;
  const int din = cfg_.visual_in();
  if (L > cfg_.max_seq_len) {
    throw ShapeError("multimodal layout length " + std::to_string(L) + " exceeds max_seq_len");
  }
  if (static_cast<int>(batch.move_tokens.size()) != B * S ||
      static_cast<int>(batch.visual.size()) != B * S * din ||
      static_cast<int>(batch.text_visible.size()) != B * S ||
      static_cast<int>(batch.image_visible.size()) != B * S) {
    throw ShapeError("multimodal batch: image/text position counts must match");
  }

  std::vector<int> ids(static_cast<size_t>(B) * L, Vocab::kPad);
  std::vector<int> pos_ids(static_cast<size_t>(B) * L, 0);
  std::vector<int> seg_ids(static_cast<size_t>(B) * L, 0);
  std::vector<double> text_ind(static_cast<size_t>(B) * L, 0.0);
  std::vector<double> img_ind(static_cast<size_t>(B) * L, 0.0);
  std::vector<double> visual(static_cast<size_t>(B) * L * din, 0.0);
  std::vector<uint8_t> key_visible(static_cast<size_t>(B) * L, 0);
  for (int b = 0; b < B; ++b) {
    auto at = [&](int p) { return static_cast<size_t>(b) * L + p; };
    ids[at(0)] = Vocab::kCls;
    text_ind[at(0)] = 1.0;
    key_visible[at(0)] = 1;
    const int sep = S + 1;
    ids[at(sep)] = Vocab::kSep;
    text_ind[at(sep)] = 1.0;
    seg_ids[at(sep)] = 1;
    key_visible[at(sep)] = 1;
    for (int t = 0; t < S; ++t) {
      const int ip = image_position(t), tp = text_position(S, t);
      pos_ids[at(ip)] = t + 1;
      pos_ids[at(tp)] = t + 1;
      seg_ids[at(tp)] = 1;
      img_ind[at(ip)] = 1.0;
      text_ind[at(tp)] = 1.0;
      ids[at(tp)] = batch.move_tokens[b * S + t];
      key_visible[at(ip)] = batch.image_visible[b * S + t];
      key_visible[at(tp)] = batch.text_visible[b * S + t];
      std::copy_n(batch.visual.begin() + (static_cast<size_t>(b) * S + t) * din, din,
                  visual.begin() + at(ip) * din);
      // Early fusion: a visible v_t is also added into m_t's input embedding
      // (same step, same projection). Attention alone is too slow a channel
      // for the text position to learn to read its own board at desk scale;
      // the residual path makes the grounded signal available from step one.
      // Masked images are never copied, preserving the visibility contract.
      if (batch.image_visible[b * S + t]) {
        std::copy_n(batch.visual.begin() + (static_cast<size_t>(b) * S + t) * din, din,
                    visual.begin() + at(tp) * din);
        img_ind[at(tp)] = 1.0;
      }
    }
  }

  Tensor tok = nn::embedding(tok_emb_, ids, {B, L});
  tok = nn::mul(tok, Tensor({B, L, 1}, std::move(text_ind)));
  Tensor vis = linear(Tensor({B, L, din}, std::move(visual)), vis_w_, vis_b_);
  vis = nn::mul(vis, Tensor({B, L, 1}, std::move(img_ind)));
  Tensor pos = nn::embedding(pos_emb_, pos_ids, {B, L});
  Tensor seg = nn::embedding(seg_emb_, seg_ids, {B, L});
  Tensor x = nn::add(nn::add(tok, vis), nn::add(pos, seg));
  x = nn::dropout(nn::layer_norm(x, lne_g_, lne_b_), cfg_.dropout, rng, training);

  // Same-step cross-modal attention prior: move token m_t and visual token
  // v_t describe the same step, but with uniform-attention init the gradient
  // toward reading a specific image is diluted across the whole layout and
  // the model settles on text-only shortcuts. A fixed additive bias between
  // the paired positions (overridden by -1e9 when the image is masked) makes
  // the grounded solution reachable at desk scale.
  std::vector<double> align(static_cast<size_t>(B) * L * L, 0.0);
  for (int b = 0; b < B; ++b) {
    double* m = align.data() + static_cast<size_t>(b) * L * L;
    for (int t = 0; t < S; ++t) {
      const int ip = image_position(t), tp = text_position(S, t);
      m[static_cast<size_t>(tp) * L + ip] = kSameStepAttnBias;
      m[static_cast<size_t>(ip) * L + tp] = kSameStepAttnBias;
    }
  }

  MultimodalOutput out;
  out.hidden.batch = B;
  out.hidden.seq_len = L;
  out.hidden.layers = stack_.forward(x, key_visible, /*causal=*/false, training, rng, &align);
  const Tensor& final_h = out.hidden.layers.back();
  Tensor text_h = nn::slice_axis(final_h, 1, S + 2, 2 * S + 2);  // (B,S,D)
  out.logits = linear(text_h, head_w_, head_b_);
  Tensor cls = nn::select_positions(final_h, std::vector<int>(B, 0));
  out.match_logit = nn::reshape(linear(cls, match_w_, match_b_), {B});
  return out;
}

ParamMap MultimodalEncoder::named_parameters() const {
  ParamMap out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  out.emplace_back("seg_emb", seg_emb_);
  out.emplace_back("lne_g", lne_g_);
  out.emplace_back("lne_b", lne_b_);
  out.emplace_back("vis_w", vis_w_);
  out.emplace_back("vis_b", vis_b_);
  stack_.collect(out, "stack.");
  out.emplace_back("head_w", head_w_);
  out.emplace_back("head_b", head_b_);
  out.emplace_back("match_w", match_w_);
  out.emplace_back("match_b", match_b_);
  return out;
}

size_t parameter_count(const ParamMap& params) {
  size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::vector<Tensor> parameter_tensors(const ParamMap& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

}  // namespace olab::models
