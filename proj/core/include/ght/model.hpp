#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ght/ops.hpp"
#include "ght/optim.hpp"

namespace ght {

enum class Arch { EncoderDecoder, DecoderOnly };
enum class AttnKind { EncSelf, DecSelf, Cross };

inline const char* attn_kind_name(AttnKind k) {
  switch (k) {
    case AttnKind::EncSelf: return "enc_self";
    case AttnKind::DecSelf: return "dec_self";
    default: return "cross";
  }
}

struct ModelConfig {
  Arch arch = Arch::EncoderDecoder;
  int layers = 2;  // per stack
  int heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int64_t vocab_size = 16;
  bool tie_embeddings = true;
  double dropout = 0.0;

  int d_head() const { return d_model / heads; }

  void validate() const {
    if (layers <= 0 || heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0)
      throw ConfigError("model: all extents must be positive");
    if (d_model % heads != 0)
      throw ConfigError(strprintf("model: d_model %d not divisible by heads %d", d_model, heads));
  }

  int attention_layer_count() const {
    return arch == Arch::EncoderDecoder ? 3 * layers : layers;
  }
};

// Per-layer, per-head binary keep mask.
struct HeadMask {
  std::vector<std::vector<uint8_t>> layers;

  bool empty() const { return layers.empty(); }
  int64_t surviving(size_t layer) const {
    int64_t n = 0;
    for (uint8_t b : layers[layer]) n += b;
    return n;
  }
  static HeadMask all_ones(int n_layers, int k) {
    HeadMask m;
    m.layers.assign(static_cast<size_t>(n_layers), std::vector<uint8_t>(static_cast<size_t>(k), 1));
    return m;
  }
};

// The three per-head intermediates captured during one attention forward:
// value projections, post-softmax attention weights, and head outputs taken
// before the shared output projection.
template <class S>
struct LayerFeatureMaps {
  std::string name;
  AttnKind kind;
  Tensor<S> value_fm;  // [B, H, Tk, d_head]
  Tensor<S> attn_fm;   // [B, H, Tq, Tk]
  Tensor<S> out_fm;    // [B, H, Tq, d_head]
};

template <class S>
struct ForwardResult {
  Tensor<S> logits;  // [B, T, V]
  std::vector<LayerFeatureMaps<S>> fms;
};

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  bool capture_fms = false;
};

template <class S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

namespace detail {

// When set, weight initializers allocate zeroed tensors and skip the rng;
// used for accounting-only and restore-target model builds.
inline bool& zero_init_flag() {
  thread_local bool flag = false;
  return flag;
}

struct ZeroInitGuard {
  explicit ZeroInitGuard(bool enable) : prev_(zero_init_flag()) {
    zero_init_flag() = prev_ || enable;
  }
  ~ZeroInitGuard() { zero_init_flag() = prev_; }
  ZeroInitGuard(const ZeroInitGuard&) = delete;
  ZeroInitGuard& operator=(const ZeroInitGuard&) = delete;

 private:
  bool prev_;
};

template <class S>
Tensor<S> xavier(int64_t fan_in, int64_t fan_out, Rng& rng) {
  if (zero_init_flag()) return Tensor<S>({fan_in, fan_out}, S(0), true);
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<S>::uniform({fan_in, fan_out}, rng, -limit, limit, true);
}

template <class S>
Tensor<S> init_normal(Shape shape, Rng& rng, double stddev) {
  if (zero_init_flag()) return Tensor<S>(std::move(shape), S(0), true);
  return Tensor<S>::randn(std::move(shape), rng, stddev, true);
}

}  // namespace detail

// Multi-head scaled dot-product attention with per-head feature-map capture
// and head masking. Per-head projections live as column blocks of w_q/w_k/w_v
// and row blocks of the shared w_out; projections carry no biases.
template <class S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int n_heads, int d_head, AttnKind kind, std::string name,
                     Rng& rng)
      : d_model_(d_model), n_heads_(n_heads), d_head_(d_head), kind_(kind), name_(std::move(name)) {
    int64_t inner = static_cast<int64_t>(n_heads) * d_head;
    w_q_ = detail::xavier<S>(d_model, inner, rng);
    w_k_ = detail::xavier<S>(d_model, inner, rng);
    w_v_ = detail::xavier<S>(d_model, inner, rng);
    w_out_ = detail::xavier<S>(inner, d_model, rng);
  }

  int n_heads() const { return n_heads_; }
  int d_head() const { return d_head_; }
  AttnKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

  Tensor<S>& w_q() { return w_q_; }
  Tensor<S>& w_k() { return w_k_; }
  Tensor<S>& w_v() { return w_v_; }
  Tensor<S>& w_out() { return w_out_; }

  void set_head_mask(std::vector<uint8_t> mask) {
    if (!mask.empty() && static_cast<int>(mask.size()) != n_heads_)
      throw ShapeError(strprintf("%s: head mask length %zu != %d heads", name_.c_str(),
                                 mask.size(), n_heads_));
    for (uint8_t b : mask)
      if (b != 0 && b != 1) throw ContractError("head mask entries must be 0 or 1");
    head_mask_ = std::move(mask);
  }
  const std::vector<uint8_t>& head_mask() const { return head_mask_; }

  // q_in [B, Tq, d_model], k_in/v_in [B, Tk, d_model].
  Tensor<S> forward(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                    const Mask* mask, LayerFeatureMaps<S>* capture) const {
    if (q_in.dim() != 3 || k_in.dim() != 3 || v_in.dim() != 3)
      throw ShapeError(strprintf("%s: attention inputs must be [B, T, d]", name_.c_str()));
    int64_t b = q_in.shape()[0];
    if (k_in.shape()[0] != b || v_in.shape()[0] != b)
      throw ShapeError(strprintf("%s: batch extents disagree", name_.c_str()));
    if (q_in.shape()[2] != d_model_ || k_in.shape()[2] != d_model_ || v_in.shape()[2] != d_model_)
      throw ShapeError(strprintf("%s: expected model dim %d, got %s", name_.c_str(), d_model_,
                                 shape_str(q_in.shape()).c_str()));
    if (k_in.shape()[1] != v_in.shape()[1])
      throw ShapeError(strprintf("%s: key/value lengths disagree", name_.c_str()));
    int64_t tq = q_in.shape()[1], tk = k_in.shape()[1];
    int64_t h = n_heads_, dh = d_head_;

    auto heads_view = [&](const Tensor<S>& x, int64_t t) {
      // [B, T, H*dh] -> [B, H, T, dh]
      return permute(reshape(x, {b, t, h, dh}), {0, 2, 1, 3});
    };
    Tensor<S> q = heads_view(matmul(q_in, w_q_), tq);
    Tensor<S> k = heads_view(matmul(k_in, w_k_), tk);
    Tensor<S> v = heads_view(matmul(v_in, w_v_), tk);

    Tensor<S> scores = bmm(reshape(q, {b * h, tq, dh}), reshape(k, {b * h, tk, dh}), true);
    scores = scale(scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    scores = reshape(scores, {b, h, tq, tk});
    Tensor<S> attn = mask ? masked_softmax(scores, *mask) : softmax(scores, -1);

    Tensor<S> o = bmm(reshape(attn, {b * h, tq, tk}), reshape(v, {b * h, tk, dh}));
    o = reshape(o, {b, h, tq, dh});

    if (capture) {
      capture->name = name_;
      capture->kind = kind_;
      capture->value_fm = v;
      capture->attn_fm = attn;
      capture->out_fm = o;
    }

    if (!head_mask_.empty()) {
      bool any_zero = false;
      for (uint8_t m : head_mask_) any_zero |= (m == 0);
      if (any_zero) {
        std::vector<S> mvals(head_mask_.begin(), head_mask_.end());
        Tensor<S> mt = Tensor<S>::from_data({1, h, 1, 1}, std::move(mvals));
        o = mul(o, mt);
      }
    }

    Tensor<S> merged = reshape(permute(o, {0, 2, 1, 3}), {b, tq, h * dh});
    return matmul(merged, w_out_);
  }

  // Drops the non-surviving heads' parameter blocks. w_q/w_k/w_v lose column
  // blocks, w_out loses the matching row blocks.
  MultiHeadAttention pruned(const std::vector<uint8_t>& keep) const {
    if (static_cast<int>(keep.size()) != n_heads_)
      throw ShapeError(strprintf("%s: prune mask length %zu != %d heads", name_.c_str(),
                                 keep.size(), n_heads_));
    std::vector<int> kept;
    for (int i = 0; i < n_heads_; ++i)
      if (keep[static_cast<size_t>(i)]) kept.push_back(i);
    if (kept.empty()) throw ContractError(strprintf("%s: cannot prune away every head", name_.c_str()));

    MultiHeadAttention out;
    out.d_model_ = d_model_;
    out.n_heads_ = static_cast<int>(kept.size());
    out.d_head_ = d_head_;
    out.kind_ = kind_;
    out.name_ = name_;

    int64_t dh = d_head_;
    int64_t new_inner = static_cast<int64_t>(kept.size()) * dh;
    auto take_cols = [&](const Tensor<S>& w) {
      std::vector<S> data(static_cast<size_t>(d_model_ * new_inner));
      int64_t old_inner = static_cast<int64_t>(n_heads_) * dh;
      for (int64_t r = 0; r < d_model_; ++r) {
        int64_t dst = r * new_inner;
        for (size_t ki = 0; ki < kept.size(); ++ki) {
          const S* src = w.data().data() + r * old_inner + kept[ki] * dh;
          std::copy_n(src, dh, data.data() + dst + static_cast<int64_t>(ki) * dh);
        }
      }
      return Tensor<S>::from_data({d_model_, new_inner}, std::move(data), true);
    };
    auto take_rows = [&](const Tensor<S>& w) {
      std::vector<S> data(static_cast<size_t>(new_inner * d_model_));
      for (size_t ki = 0; ki < kept.size(); ++ki) {
        const S* src = w.data().data() + static_cast<int64_t>(kept[ki]) * dh * d_model_;
        std::copy_n(src, dh * d_model_, data.data() + static_cast<int64_t>(ki) * dh * d_model_);
      }
      return Tensor<S>::from_data({new_inner, d_model_}, std::move(data), true);
    };
    out.w_q_ = take_cols(w_q_);
    out.w_k_ = take_cols(w_k_);
    out.w_v_ = take_cols(w_v_);
    out.w_out_ = take_rows(w_out_);
    return out;
  }

  // Rebuild with a different head count (used when loading pruned checkpoints).
  void resize_heads(int n_heads) {
    n_heads_ = n_heads;
    int64_t inner = static_cast<int64_t>(n_heads) * d_head_;
    w_q_ = Tensor<S>({static_cast<int64_t>(d_model_), inner}, S(0), true);
    w_k_ = Tensor<S>({static_cast<int64_t>(d_model_), inner}, S(0), true);
    w_v_ = Tensor<S>({static_cast<int64_t>(d_model_), inner}, S(0), true);
    w_out_ = Tensor<S>({inner, static_cast<int64_t>(d_model_)}, S(0), true);
    head_mask_.clear();
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<S>>& out) {
    out.push_back({prefix + ".w_q", w_q_});
    out.push_back({prefix + ".w_k", w_k_});
    out.push_back({prefix + ".w_v", w_v_});
    out.push_back({prefix + ".w_out", w_out_});
  }

 private:
  int d_model_ = 0, n_heads_ = 0, d_head_ = 0;
  AttnKind kind_ = AttnKind::EncSelf;
  std::string name_;
  Tensor<S> w_q_, w_k_, w_v_, w_out_;
  std::vector<uint8_t> head_mask_;
};

template <class S>
struct LayerNormParams {
  Tensor<S> gain, bias;

  void init(int d) {
    gain = Tensor<S>({d}, S(1), true);
    bias = Tensor<S>({d}, S(0), true);
  }
  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gain, bias, -1); }
  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) {
    out.push_back({prefix + ".g", gain});
    out.push_back({prefix + ".b", bias});
  }
};

template <class S>
struct FeedForward {
  Tensor<S> w1, b1, w2, b2;

  void init(int d_model, int d_ff, Rng& rng) {
    w1 = detail::xavier<S>(d_model, d_ff, rng);
    b1 = Tensor<S>({d_ff}, S(0), true);
    w2 = detail::xavier<S>(d_ff, d_model, rng);
    b2 = Tensor<S>({d_model}, S(0), true);
  }
  Tensor<S> forward(const Tensor<S>& x) const {
    return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
  }
  void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) {
    out.push_back({prefix + ".w1", w1});
    out.push_back({prefix + ".b1", b1});
    out.push_back({prefix + ".w2", w2});
    out.push_back({prefix + ".b2", b2});
  }
};

template <class S>
struct EncoderLayer {
  LayerNormParams<S> ln1, ln2;
  MultiHeadAttention<S> self_attn;
  FeedForward<S> ffn;
};

template <class S>
struct DecoderLayer {
  LayerNormParams<S> ln1, ln2, ln3;
  MultiHeadAttention<S> self_attn;
  MultiHeadAttention<S> cross_attn;  // encoder-decoder only
  FeedForward<S> ffn;
};

// Pre-norm transformer; layer norm is applied to the sublayer input, the
// residual is added after, and each stack ends with a final norm. Decoder
// input and output projections share one table when tie_embeddings is set.
template <class S>
class TransformerModel {
 public:
  TransformerModel() = default;

  // Structure with zeroed weights; for parameter accounting and as the
  // target of checkpoint restores and prunes.
  static TransformerModel build_zeroed(const ModelConfig& cfg) {
    Rng unused(0);
    return build_impl(cfg, unused, /*initialize=*/false);
  }

  static TransformerModel build(const ModelConfig& cfg, Rng& rng) {
    return build_impl(cfg, rng, /*initialize=*/true);
  }

 private:
  static TransformerModel build_impl(const ModelConfig& cfg, Rng& rng, bool initialize) {
    cfg.validate();
    TransformerModel m;
    m.cfg_ = cfg;
    detail::ZeroInitGuard guard(!initialize);
    double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    m.tgt_embed_ = detail::init_normal<S>({cfg.vocab_size, cfg.d_model}, rng, emb_std);
    if (cfg.arch == Arch::EncoderDecoder) {
      m.src_embed_ = detail::init_normal<S>({cfg.vocab_size, cfg.d_model}, rng, emb_std);
      for (int i = 0; i < cfg.layers; ++i) {
        EncoderLayer<S> l;
        l.ln1.init(cfg.d_model);
        l.self_attn = MultiHeadAttention<S>(cfg.d_model, cfg.heads, cfg.d_head(),
                                            AttnKind::EncSelf, strprintf("enc.%d.self", i), rng);
        l.ln2.init(cfg.d_model);
        l.ffn.init(cfg.d_model, cfg.d_ff, rng);
        m.encoder_.push_back(std::move(l));
      }
      m.enc_final_ln_.init(cfg.d_model);
    }
    for (int i = 0; i < cfg.layers; ++i) {
      DecoderLayer<S> l;
      l.ln1.init(cfg.d_model);
      l.self_attn = MultiHeadAttention<S>(cfg.d_model, cfg.heads, cfg.d_head(), AttnKind::DecSelf,
                                          strprintf("dec.%d.self", i), rng);
      if (cfg.arch == Arch::EncoderDecoder) {
        l.ln2.init(cfg.d_model);
        l.cross_attn = MultiHeadAttention<S>(cfg.d_model, cfg.heads, cfg.d_head(), AttnKind::Cross,
                                             strprintf("dec.%d.cross", i), rng);
      }
      l.ln3.init(cfg.d_model);
      l.ffn.init(cfg.d_model, cfg.d_ff, rng);
      m.decoder_.push_back(std::move(l));
    }
    m.dec_final_ln_.init(cfg.d_model);
    if (!cfg.tie_embeddings)
      m.generator_ = detail::xavier<S>(cfg.d_model, cfg.vocab_size, rng);
    return m;
  }

 public:
  const ModelConfig& config() const { return cfg_; }

  // Teacher-forced forward. For decoder-only models `src` is ignored.
  ForwardResult<S> forward(const IntTensor& src, const IntTensor& tgt_in,
                           const ForwardOptions& opt = {}) const {
    ForwardResult<S> out;
    if (opt.capture_fms) out.fms.reserve(static_cast<size_t>(cfg_.attention_layer_count()));

    Tensor<S> memory;
    if (cfg_.arch == Arch::EncoderDecoder) {
      Tensor<S> x = embed_input(src_embed_, src, opt);
      for (const auto& l : encoder_) {
        LayerFeatureMaps<S>* cap = opt.capture_fms ? push_capture(out) : nullptr;
        Tensor<S> a_in = l.ln1.forward(x);
        Tensor<S> a = l.self_attn.forward(a_in, a_in, a_in, nullptr, cap);
        x = add(x, apply_dropout(a, opt));
        Tensor<S> f = l.ffn.forward(l.ln2.forward(x));
        x = add(x, apply_dropout(f, opt));
      }
      memory = enc_final_ln_.forward(x);
    }

    int64_t t = tgt_in.shape.back();
    Mask causal = Mask::causal(t);
    Tensor<S> y = embed_input(tgt_embed_, tgt_in, opt);
    for (const auto& l : decoder_) {
      LayerFeatureMaps<S>* cap = opt.capture_fms ? push_capture(out) : nullptr;
      Tensor<S> a_in = l.ln1.forward(y);
      Tensor<S> a = l.self_attn.forward(a_in, a_in, a_in, &causal, cap);
      y = add(y, apply_dropout(a, opt));
      if (cfg_.arch == Arch::EncoderDecoder) {
        LayerFeatureMaps<S>* cap2 = opt.capture_fms ? push_capture(out) : nullptr;
        Tensor<S> c_in = l.ln2.forward(y);
        Tensor<S> c = l.cross_attn.forward(c_in, memory, memory, nullptr, cap2);
        y = add(y, apply_dropout(c, opt));
      }
      Tensor<S> f = l.ffn.forward(l.ln3.forward(y));
      y = add(y, apply_dropout(f, opt));
    }
    Tensor<S> h = dec_final_ln_.forward(y);
    Tensor<S> gen =
        cfg_.tie_embeddings ? permute(tgt_embed_, {1, 0}) : generator_;
    out.logits = matmul(h, gen);
    return out;
  }

  // Ordered attention layers: encoder self 0..n-1, then per decoder layer
  // self followed by cross. Matches the capture order of forward().
  std::vector<MultiHeadAttention<S>*> attention_layers() {
    std::vector<MultiHeadAttention<S>*> out;
    for (auto& l : encoder_) out.push_back(&l.self_attn);
    for (auto& l : decoder_) {
      out.push_back(&l.self_attn);
      if (cfg_.arch == Arch::EncoderDecoder) out.push_back(&l.cross_attn);
    }
    return out;
  }
  std::vector<const MultiHeadAttention<S>*> attention_layers() const {
    std::vector<const MultiHeadAttention<S>*> out;
    for (const auto& l : encoder_) out.push_back(&l.self_attn);
    for (const auto& l : decoder_) {
      out.push_back(&l.self_attn);
      if (cfg_.arch == Arch::EncoderDecoder) out.push_back(&l.cross_attn);
    }
    return out;
  }

  void install_head_mask(const HeadMask& mask) {
    auto layers = attention_layers();
    if (mask.layers.size() != layers.size())
      throw ShapeError(strprintf("head mask has %zu layers, model has %zu", mask.layers.size(),
                                 layers.size()));
    for (size_t i = 0; i < layers.size(); ++i) layers[i]->set_head_mask(mask.layers[i]);
    mask_installed_ = true;
  }

  void clear_head_mask() {
    for (auto* l : attention_layers()) l->set_head_mask({});
    mask_installed_ = false;
  }

  bool mask_installed() const { return mask_installed_; }

  HeadMask current_mask() const {
    HeadMask m;
    for (const auto* l : attention_layers()) {
      if (l->head_mask().empty())
        m.layers.emplace_back(static_cast<size_t>(l->n_heads()), 1);
      else
        m.layers.push_back(l->head_mask());
    }
    return m;
  }

  // New model with the masked heads' parameter blocks physically removed.
  // All parameter storage is fresh; the source model is untouched. Layers
  // with an all-ones mask keep their full head set.
  TransformerModel structural_prune(const HeadMask& mask) const {
    auto layers = attention_layers();
    if (mask.layers.size() != layers.size())
      throw ShapeError(strprintf("structural_prune: mask has %zu layers, model has %zu",
                                 mask.layers.size(), layers.size()));
    // V2S-complete: every layer the vote touched keeps the same head count.
    int64_t kept = -1;
    for (size_t i = 0; i < mask.layers.size(); ++i) {
      int64_t n = 0;
      bool all_ones = true;
      for (uint8_t b : mask.layers[i]) {
        if (b != 0 && b != 1) throw ContractError("structural_prune: mask entries must be 0 or 1");
        n += b;
        all_ones &= (b == 1);
      }
      if (n == 0)
        throw ContractError(strprintf("structural_prune: layer %zu keeps no heads", i));
      if (all_ones) continue;
      if (kept == -1)
        kept = n;
      else if (n != kept)
        throw ContractError("structural_prune: mask is not V2S-complete (uneven survivor counts)");
    }

    TransformerModel out = build_zeroed(cfg_);
    auto src_named = const_cast<TransformerModel*>(this)->named_params();
    auto dst_named = out.named_params();
    for (size_t i = 0; i < src_named.size(); ++i)
      dst_named[i].tensor.data() = src_named[i].tensor.data();
    auto dst_layers = out.attention_layers();
    for (size_t i = 0; i < dst_layers.size(); ++i)
      *dst_layers[i] = layers[i]->pruned(mask.layers[i]);
    return out;
  }

  std::vector<NamedParam<S>> named_params() {
    std::vector<NamedParam<S>> out;
    if (cfg_.arch == Arch::EncoderDecoder) out.push_back({"embed.src", src_embed_});
    out.push_back({"embed.tgt", tgt_embed_});
    if (!cfg_.tie_embeddings) out.push_back({"generator.w", generator_});
    for (size_t i = 0; i < encoder_.size(); ++i) {
      auto& l = encoder_[i];
      std::string p = strprintf("enc.%zu", i);
      l.ln1.collect(p + ".ln1", out);
      l.self_attn.collect_params(p + ".self", out);
      l.ln2.collect(p + ".ln2", out);
      l.ffn.collect(p + ".ffn", out);
    }
    if (cfg_.arch == Arch::EncoderDecoder) enc_final_ln_.collect("enc.final_ln", out);
    for (size_t i = 0; i < decoder_.size(); ++i) {
      auto& l = decoder_[i];
      std::string p = strprintf("dec.%zu", i);
      l.ln1.collect(p + ".ln1", out);
      l.self_attn.collect_params(p + ".self", out);
      if (cfg_.arch == Arch::EncoderDecoder) {
        l.ln2.collect(p + ".ln2", out);
        l.cross_attn.collect_params(p + ".cross", out);
      }
      l.ln3.collect(p + ".ln3", out);
      l.ffn.collect(p + ".ffn", out);
    }
    dec_final_ln_.collect("dec.final_ln", out);
    return out;
  }

  std::vector<Tensor<S>> parameters() {
    std::vector<Tensor<S>> out;
    for (auto& np : named_params()) out.push_back(np.tensor);
    return out;
  }

  Tensor<S>& tgt_embed() { return tgt_embed_; }
  Tensor<S>& src_embed() { return src_embed_; }
  Tensor<S>& generator() { return generator_; }

 private:
  LayerFeatureMaps<S>* push_capture(ForwardResult<S>& r) const {
    r.fms.emplace_back();
    return &r.fms.back();
  }

  Tensor<S> apply_dropout(const Tensor<S>& x, const ForwardOptions& opt) const {
    if (!opt.training || cfg_.dropout <= 0.0 || !opt.dropout_rng) return x;
    return dropout(x, cfg_.dropout, *opt.dropout_rng, true);
  }

  Tensor<S> embed_input(const Tensor<S>& table, const IntTensor& ids,
                        const ForwardOptions& opt) const {
    Tensor<S> e = embedding(table, ids);
    e = scale(e, static_cast<S>(std::sqrt(static_cast<double>(cfg_.d_model))));
    e = add(e, positional_encoding(ids.shape.back()));
    return apply_dropout(e, opt);
  }

  Tensor<S> positional_encoding(int64_t t) const {
    int64_t d = cfg_.d_model;
    std::vector<S> pe(static_cast<size_t>(t * d));
    for (int64_t pos = 0; pos < t; ++pos)
      for (int64_t i = 0; i < d; i += 2) {
        double angle = static_cast<double>(pos) /
                       std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        pe[static_cast<size_t>(pos * d + i)] = static_cast<S>(std::sin(angle));
        if (i + 1 < d) pe[static_cast<size_t>(pos * d + i + 1)] = static_cast<S>(std::cos(angle));
      }
    return Tensor<S>::from_data({t, d}, std::move(pe));
  }

  ModelConfig cfg_;
  Tensor<S> src_embed_, tgt_embed_, generator_;
  std::vector<EncoderLayer<S>> encoder_;
  std::vector<DecoderLayer<S>> decoder_;
  LayerNormParams<S> enc_final_ln_, dec_final_ln_;
  bool mask_installed_ = false;
};

}  // namespace ght
