#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vtb/common/error.hpp"
#include "vtb/common/rng.hpp"
#include "vtb/model/config.hpp"
#include "vtb/model/frontend.hpp"
#include "vtb/model/graph.hpp"
#include "vtb/textproc/chat_template.hpp"

namespace vtb::nn {

template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Matrix<T> init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->value = std::move(init);
    auto* raw = p.get();
    index_.emplace(raw->name, raw);
    order_.push_back(std::move(p));
    return *raw;
  }

  Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  Parameter<T>& at(const std::string& name) const {
    auto* p = find(name);
    if (!p) throw InvalidArgument("no parameter " + name);
    return *p;
  }

  void remove(const std::string& name) {
    index_.erase(name);
    order_.erase(std::remove_if(order_.begin(), order_.end(), [&](const auto& p) { return p->name == name; }),
                 order_.end());
  }

  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    for (const auto& p : order_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return order_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> order_;
  std::unordered_map<std::string, Parameter<T>*> index_;
};

// y = x W^T (+ b) (+ scale * (x A^T) B^T when LoRA factors are attached).
template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  Parameter<T>* lora_a = nullptr;
  Parameter<T>* lora_b = nullptr;
  T lora_scale = 0;

  Var operator()(Graph<T>& g, Var x) const {
    Var y = g.linear(x, g.param(*weight));
    if (lora_a) {
      Var low = g.linear(g.linear(x, g.param(*lora_a)), g.param(*lora_b));
      y = g.add(y, g.scale(low, lora_scale));
    }
    if (bias) y = g.add_row(y, g.param(*bias));
    return y;
  }

  Eigen::Index in_features() const { return weight->value.cols(); }
  Eigen::Index out_features() const { return weight->value.rows(); }
};

template <class T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;  // null selects RMS normalization

  Var operator()(Graph<T>& g, Var x) const {
    if (beta) return g.layer_norm(x, g.param(*gamma), g.param(*beta), T(1e-5));
    return g.rms_norm(x, g.param(*gamma), T(1e-6));
  }
};

template <class T>
struct Attention {
  Linear<T> q, k, v, o;
  int heads = 1;
  bool causal = false;

  Var operator()(Graph<T>& g, Var x) const {
    Var qq = g.rope(q(g, x), heads);
    Var kk = g.rope(k(g, x), heads);
    return o(g, g.attention(qq, kk, v(g, x), heads, causal));
  }
};

template <class T>
struct EncoderBlock {
  LayerNorm<T> ln1, ln2;
  Attention<T> attn;
  Linear<T> up, down;
};

template <class T>
struct ConformerBlock {
  LayerNorm<T> ff1_ln, attn_ln, conv_ln, conv_norm, ff2_ln, out_ln;
  Linear<T> ff1_up, ff1_down, ff2_up, ff2_down;
  Attention<T> attn;
  Linear<T> pointwise_in, pointwise_out;
  Parameter<T>* depthwise_w = nullptr;
  Parameter<T>* depthwise_b = nullptr;
};

template <class T>
struct DecoderBlock {
  LayerNorm<T> attn_norm, ffn_norm;
  Attention<T> attn;
  Linear<T> gate, up, down;
};

struct TrainableGroups {
  bool encoder = true;
  bool adapter = true;
  bool lora = true;
};

struct EmptyLossMask : Error {
  EmptyLossMask() : Error("empty_loss_mask", "loss mask has no positive positions") {}
};

// Expanded layout after splicing speech frames into the text sequence:
// row i is text token `ids[i]` (or -1 for a speech frame).
struct AssembledLayout {
  std::vector<TokenId> ids;
  LossMask mask;
};

inline AssembledLayout assembled_layout(std::span<const TokenId> ids, std::span<const std::uint8_t> mask,
                                        std::span<const std::size_t> slot_positions,
                                        std::span<const std::size_t> frames) {
  if (slot_positions.size() != frames.size()) throw InvalidArgument("speech slot / feature count mismatch");
  AssembledLayout out;
  std::size_t s = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (s < slot_positions.size() && slot_positions[s] == i) {
      out.ids.insert(out.ids.end(), frames[s], -1);
      out.mask.insert(out.mask.end(), frames[s], 0);
      ++s;
    } else {
      out.ids.push_back(ids[i]);
      out.mask.push_back(mask.empty() ? 0 : mask[i]);
    }
  }
  if (s != slot_positions.size()) throw InvalidArgument("speech slot position outside the sequence");
  return out;
}

// Next-token targets: row r predicts row r + 1.
struct ShiftedTargets {
  std::vector<TokenId> targets;
  LossMask mask;
  std::size_t count = 0;
};

inline ShiftedTargets shift_targets(const AssembledLayout& layout) {
  ShiftedTargets t;
  const auto n = layout.ids.size();
  t.targets.assign(n, 0);
  t.mask.assign(n, 0);
  for (std::size_t r = 0; r + 1 < n; ++r) {
    if (layout.mask[r + 1] && layout.ids[r + 1] >= 0) {
      t.targets[r] = layout.ids[r + 1];
      t.mask[r] = 1;
      ++t.count;
    }
  }
  return t;
}

// Speech encoder -> Conformer adapter -> decoder LM with LoRA on every
// attention and feed-forward projection. Base LM weights are never trainable.
template <class T>
class MultimodalModel {
 public:
  MultimodalModel(ModelConfig cfg, std::uint64_t seed, bool with_lora = true)
      : cfg_(std::move(cfg)), frontend_(cfg_.frontend), init_rng_(splitmix64(seed)) {
    cfg_.validate();
    build_encoder();
    build_adapter();
    build_lm();
    if (with_lora && cfg_.lora.rank > 0) apply_lora(cfg_.lora);
    set_trainable({});
  }

  MultimodalModel(const MultimodalModel&) = delete;
  MultimodalModel& operator=(const MultimodalModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  bool has_lora() const { return has_lora_; }
  const TrainableGroups& trainable_groups() const { return groups_; }

  // Deep copy with identical structure and values.
  std::unique_ptr<MultimodalModel> clone() const { return cast<T>(); }

  template <class U>
  std::unique_ptr<MultimodalModel<U>> cast() const {
    ModelConfig c = cfg_;
    if (has_lora_) c.lora = lora_applied_;
    auto m = std::make_unique<MultimodalModel<U>>(c, 0, has_lora_);
    for (auto* p : store_.all()) m->params().at(p->name).value = p->value.template cast<U>();
    m->set_trainable(groups_);
    return m;
  }

  // ------------------------------------------------------------ speech path

  std::size_t frame_count(std::size_t samples) const {
    return frontend_.frame_count(samples) / static_cast<std::size_t>(cfg_.encoder.downsample());
  }

  Matrix<T> features(std::span<const float> wave) const { return frontend_.template compute<T>(wave); }

  Var encode_speech(Graph<T>& g, const Matrix<T>& mel) const {
    if (mel.cols() != cfg_.frontend.n_mels) throw InvalidArgument("feature width does not match n_mels");
    if (mel.rows() / cfg_.encoder.downsample() == 0) throw InvalidArgument("audio too short for one 80 ms frame");
    Var x = g.constant(mel);
    x = g.gelu(enc_stage1_(g, g.stack_frames(x, cfg_.encoder.stride_1)));
    x = enc_stage2_(g, g.stack_frames(x, cfg_.encoder.stride_2));
    for (const auto& b : enc_blocks_) {
      x = g.add(x, b.attn(g, b.ln1(g, x)));
      x = g.add(x, b.down(g, g.gelu(b.up(g, b.ln2(g, x)))));
    }
    return enc_out_ln_(g, x);
  }

  Var adapt(Graph<T>& g, Var enc) const {
    if (g.value(enc).cols() != cfg_.encoder.width) throw InvalidArgument("adapter input width mismatch");
    Var x = adp_proj_(g, enc);
    for (const auto& b : adp_blocks_) {
      x = g.add(x, g.scale(b.ff1_down(g, g.silu(b.ff1_up(g, b.ff1_ln(g, x)))), T(0.5)));
      x = g.add(x, b.attn(g, b.attn_ln(g, x)));
      Var c = g.glu(b.pointwise_in(g, b.conv_ln(g, x)));
      c = g.depthwise_conv(c, g.param(*b.depthwise_w), g.param(*b.depthwise_b));
      c = b.pointwise_out(g, g.silu(b.conv_norm(g, c)));
      x = g.add(x, c);
      x = g.add(x, g.scale(b.ff2_down(g, g.silu(b.ff2_up(g, b.ff2_ln(g, x)))), T(0.5)));
      x = b.out_ln(g, x);
    }
    return x;
  }

  Var speech_features(Graph<T>& g, const Matrix<T>& mel) const { return adapt(g, encode_speech(g, mel)); }

  // ------------------------------------------------------------ text path

  Var embed_text(Graph<T>& g, std::span<const TokenId> ids) const {
    if (ids.empty()) return g.constant(Matrix<T>(0, cfg_.lm.width));
    return g.embedding(g.param(*embed_), ids, embed_scale());
  }

  // Placeholder rows are replaced by their slot's feature rows, in order.
  Var assemble(Graph<T>& g, std::span<const TokenId> ids, std::span<const std::size_t> slot_positions,
               std::span<const Var> speech) const {
    if (slot_positions.size() != speech.size()) throw InvalidArgument("speech slot / feature count mismatch");
    for (std::size_t s = 0; s < slot_positions.size(); ++s) {
      if (slot_positions[s] >= ids.size()) throw InvalidArgument("speech slot outside the sequence");
      if (s > 0 && slot_positions[s] <= slot_positions[s - 1]) throw InvalidArgument("speech slots out of order");
      if (g.value(speech[s]).cols() != cfg_.lm.width) throw InvalidArgument("speech feature width != LM width");
    }
    if (speech.empty()) return embed_text(g, ids);
    std::vector<Var> parts;
    std::size_t start = 0;
    for (std::size_t s = 0; s < slot_positions.size(); ++s) {
      if (slot_positions[s] > start) parts.push_back(embed_text(g, ids.subspan(start, slot_positions[s] - start)));
      parts.push_back(speech[s]);
      start = slot_positions[s] + 1;
    }
    if (start < ids.size()) parts.push_back(embed_text(g, ids.subspan(start)));
    return g.concat_rows(parts);
  }

  Var lm_forward(Graph<T>& g, Var x) const {
    for (std::size_t l = 0; l < dec_blocks_.size(); ++l) {
      const auto& b = dec_blocks_[l];
      x = g.add(x, b.attn(g, b.attn_norm(g, x)));
      Var h = b.ffn_norm(g, x);
      x = g.add(x, b.down(g, g.mul(g.gelu(b.gate(g, h)), b.up(g, h))));
      if (!g.value(x).allFinite()) throw NumericError("non-finite activation in LM layer " + std::to_string(l));
    }
    Var logits = head_(g, final_norm_(g, x));
    if (!g.value(logits).allFinite()) throw NumericError("non-finite logits");
    return logits;
  }

  // Mean next-token NLL over mask=1 positions, scaled so that summing over
  // sequences with a shared normalizer gives the batch mean.
  Var loss(Graph<T>& g, Var logits, const ShiftedTargets& t, T normalizer = T(0)) const {
    if (t.count == 0) throw EmptyLossMask();
    return g.masked_nll(logits, t.targets, t.mask, normalizer > T(0) ? normalizer : T(t.count));
  }

  // ------------------------------------------------------------ LoRA

  void apply_lora(const LoraConfig& lc) {
    if (has_lora_) throw InvalidArgument("LoRA already applied");
    if (lc.rank < 0) throw InvalidArgument("negative LoRA rank");
    if (lc.rank == 0) return;
    Rng rng(splitmix64(init_rng_() ^ 0x10A4ULL));
    for (auto& [name, lin] : lora_targets()) {
      const auto in = lin->in_features();
      const auto out = lin->out_features();
      const T bound = T(1) / std::sqrt(T(in));
      Matrix<T> a(lc.rank, in);
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = T((2.0 * uniform_unit(rng) - 1.0)) * bound;
      lin->lora_a = &store_.add(name + ".lora_a", std::move(a));
      lin->lora_b = &store_.add(name + ".lora_b", Matrix<T>::Zero(out, lc.rank));
      lin->lora_scale = T(lc.scale());
    }
    has_lora_ = true;
    lora_applied_ = lc;
    set_trainable(groups_);
  }

  // W <- W + scale * B A for every wrapped map; factors are dropped.
  void merge_lora() {
    if (!has_lora_) return;
    for (auto& [name, lin] : lora_targets()) {
      lin->weight->value.noalias() += lin->lora_scale * (lin->lora_b->value * lin->lora_a->value);
      store_.remove(name + ".lora_a");
      store_.remove(name + ".lora_b");
      lin->lora_a = lin->lora_b = nullptr;
      lin->lora_scale = 0;
    }
    has_lora_ = false;
  }

  // Names of every LoRA-wrappable projection: attention q/k/v/o and FFN gate/up/down.
  std::vector<std::string> lora_target_names() const {
    std::vector<std::string> out;
    for (const auto& [name, lin] : const_cast<MultimodalModel*>(this)->lora_targets()) out.push_back(name);
    return out;
  }

  // ------------------------------------------------------------ trainable set

  void set_trainable(TrainableGroups groups) {
    groups_ = groups;
    for (auto* p : store_.all()) p->trainable = is_trainable_name(p->name, groups);
  }

  static bool is_trainable_name(const std::string& name, const TrainableGroups& groups) {
    auto starts = [&](const char* pre) { return name.rfind(pre, 0) == 0; };
    auto ends = [&](const char* suf) {
      const std::string s(suf);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (starts("encoder.")) return groups.encoder;
    if (starts("adapter.")) return groups.adapter;
    if (ends(".lora_a") || ends(".lora_b")) return groups.lora;
    return false;
  }

  std::vector<Parameter<T>*> trainable_parameters() const {
    std::vector<Parameter<T>*> out;
    for (auto* p : store_.all())
      if (p->trainable) out.push_back(p);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (auto* p : trainable_parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  void zero_grad() {
    for (auto* p : trainable_parameters()) p->zero_grad();
  }

 private:
  T embed_scale() const { return std::sqrt(T(cfg_.lm.width)); }

  Matrix<T> normal(Eigen::Index rows, Eigen::Index cols, double std) {
    Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(std * standard_normal(init_rng_));
    return m;
  }

  Linear<T> make_linear(const std::string& name, int in, int out, bool bias) {
    Linear<T> l;
    l.weight = &store_.add(name + ".weight", normal(out, in, 1.0 / std::sqrt(static_cast<double>(in))));
    if (bias) l.bias = &store_.add(name + ".bias", Matrix<T>::Zero(1, out));
    return l;
  }

  LayerNorm<T> make_norm(const std::string& name, int width, bool rms) {
    LayerNorm<T> n;
    n.gamma = &store_.add(name + ".gamma", Matrix<T>::Ones(1, width));
    if (!rms) n.beta = &store_.add(name + ".beta", Matrix<T>::Zero(1, width));
    return n;
  }

  Attention<T> make_attention(const std::string& name, int width, int heads, bool causal, bool bias) {
    Attention<T> a;
    a.q = make_linear(name + ".q", width, width, bias);
    a.k = make_linear(name + ".k", width, width, bias);
    a.v = make_linear(name + ".v", width, width, bias);
    a.o = make_linear(name + ".o", width, width, bias);
    a.heads = heads;
    a.causal = causal;
    return a;
  }

  void build_encoder() {
    const auto& e = cfg_.encoder;
    enc_stage1_ = make_linear("encoder.subsample1", cfg_.frontend.n_mels * e.stride_1, e.width, true);
    enc_stage2_ = make_linear("encoder.subsample2", e.width * e.stride_2, e.width, true);
    for (int l = 0; l < e.layers; ++l) {
      const auto p = "encoder.layers." + std::to_string(l);
      EncoderBlock<T> b;
      b.ln1 = make_norm(p + ".ln1", e.width, false);
      b.attn = make_attention(p + ".attn", e.width, e.heads, false, true);
      b.ln2 = make_norm(p + ".ln2", e.width, false);
      b.up = make_linear(p + ".ff.up", e.width, e.width * e.ff_mult, true);
      b.down = make_linear(p + ".ff.down", e.width * e.ff_mult, e.width, true);
      enc_blocks_.push_back(b);
    }
    enc_out_ln_ = make_norm("encoder.out_ln", e.width, false);
  }

  void build_adapter() {
    const auto& a = cfg_.adapter;
    const int w = a.width;
    adp_proj_ = make_linear("adapter.proj", cfg_.encoder.width, w, true);
    for (int l = 0; l < a.layers; ++l) {
      const auto p = "adapter.blocks." + std::to_string(l);
      ConformerBlock<T> b;
      b.ff1_ln = make_norm(p + ".ff1.ln", w, false);
      b.ff1_up = make_linear(p + ".ff1.up", w, w * a.ff_mult, true);
      b.ff1_down = make_linear(p + ".ff1.down", w * a.ff_mult, w, true);
      b.attn_ln = make_norm(p + ".attn.ln", w, false);
      b.attn = make_attention(p + ".attn", w, a.heads, false, true);
      b.conv_ln = make_norm(p + ".conv.ln", w, false);
      b.pointwise_in = make_linear(p + ".conv.pointwise_in", w, 2 * w, true);
      b.depthwise_w = &store_.add(p + ".conv.depthwise.weight",
                                  normal(w, a.conv_kernel, 1.0 / std::sqrt(static_cast<double>(a.conv_kernel))));
      b.depthwise_b = &store_.add(p + ".conv.depthwise.bias", Matrix<T>::Zero(1, w));
      b.conv_norm = make_norm(p + ".conv.norm", w, false);
      b.pointwise_out = make_linear(p + ".conv.pointwise_out", w, w, true);
      b.ff2_ln = make_norm(p + ".ff2.ln", w, false);
      b.ff2_up = make_linear(p + ".ff2.up", w, w * a.ff_mult, true);
      b.ff2_down = make_linear(p + ".ff2.down", w * a.ff_mult, w, true);
      b.out_ln = make_norm(p + ".out_ln", w, false);
      adp_blocks_.push_back(b);
    }
  }

  void build_lm() {
    const auto& m = cfg_.lm;
    embed_ = &store_.add("lm.embed", normal(m.vocab_size, m.width, 1.0 / std::sqrt(static_cast<double>(m.width))));
    for (int l = 0; l < m.layers; ++l) {
      const auto p = "lm.layers." + std::to_string(l);
      DecoderBlock<T> b;
      b.attn_norm = make_norm(p + ".attn_norm", m.width, true);
      b.attn = make_attention(p + ".attn", m.width, m.heads, true, false);
      b.ffn_norm = make_norm(p + ".ffn_norm", m.width, true);
      b.gate = make_linear(p + ".ffn.gate", m.width, m.ff_hidden, false);
      b.up = make_linear(p + ".ffn.up", m.width, m.ff_hidden, false);
      b.down = make_linear(p + ".ffn.down", m.ff_hidden, m.width, false);
      dec_blocks_.push_back(b);
    }
    final_norm_ = make_norm("lm.final_norm", m.width, true);
    head_ = make_linear("lm.head", m.width, m.vocab_size, false);
  }

  std::vector<std::pair<std::string, Linear<T>*>> lora_targets() {
    std::vector<std::pair<std::string, Linear<T>*>> out;
    for (std::size_t l = 0; l < dec_blocks_.size(); ++l) {
      const auto p = "lm.layers." + std::to_string(l);
      auto& b = dec_blocks_[l];
      out.emplace_back(p + ".attn.q", &b.attn.q);
      out.emplace_back(p + ".attn.k", &b.attn.k);
      out.emplace_back(p + ".attn.v", &b.attn.v);
      out.emplace_back(p + ".attn.o", &b.attn.o);
      out.emplace_back(p + ".ffn.gate", &b.gate);
      out.emplace_back(p + ".ffn.up", &b.up);
      out.emplace_back(p + ".ffn.down", &b.down);
    }
    return out;
  }

  ModelConfig cfg_;
  LogMelFrontend frontend_;
  Rng init_rng_;
  ParameterStore<T> store_;
  bool has_lora_ = false;
  LoraConfig lora_applied_{0, 0.0};
  TrainableGroups groups_;

  Linear<T> enc_stage1_, enc_stage2_;
  std::vector<EncoderBlock<T>> enc_blocks_;
  LayerNorm<T> enc_out_ln_;
  Linear<T> adp_proj_;
  std::vector<ConformerBlock<T>> adp_blocks_;
  Parameter<T>* embed_ = nullptr;
  std::vector<DecoderBlock<T>> dec_blocks_;
  LayerNorm<T> final_norm_;
  Linear<T> head_;
};

// One rendered sequence with its speech inputs as log-mel matrices.
template <class T>
struct SequenceInput {
  TokenSeq ids;
  LossMask mask;
  std::vector<std::size_t> slot_positions;
  std::vector<const Matrix<T>*> mels;
};

template <class T>
struct SequenceForward {
  Var inputs;
  Var logits;
  ShiftedTargets targets;
};

// Encoder -> adapter per slot, splice, LM. Targets come from the expanded layout.
template <class T>
SequenceForward<T> forward_sequence(const MultimodalModel<T>& model, Graph<T>& g, const SequenceInput<T>& in) {
  if (in.slot_positions.size() != in.mels.size()) throw InvalidArgument("speech slot / feature count mismatch");
  std::vector<Var> speech;
  std::vector<std::size_t> frames;
  for (const auto* mel : in.mels) {
    speech.push_back(model.speech_features(g, *mel));
    frames.push_back(static_cast<std::size_t>(g.value(speech.back()).rows()));
  }
  SequenceForward<T> out;
  out.inputs = model.assemble(g, in.ids, in.slot_positions, speech);
  out.logits = model.lm_forward(g, out.inputs);
  out.targets = shift_targets(assembled_layout(in.ids, in.mask, in.slot_positions, frames));
  return out;
}

// Argmax continuation of an assembled prefix. Stops at `stop` (not emitted)
// or after max_new tokens.
template <class T>
TokenSeq greedy_decode(const MultimodalModel<T>& model, const Matrix<T>& prefix, int max_new, TokenId stop) {
  TokenSeq out;
  if (max_new <= 0) return out;
  if (prefix.rows() == 0) throw InvalidArgument("greedy_decode needs a non-empty prefix");
  Matrix<T> x = prefix;
  for (int step = 0; step < max_new; ++step) {
    Graph<T> g(false);
    Var logits = model.lm_forward(g, g.constant(x));
    const auto& lv = g.value(logits);
    Eigen::Index best;
    lv.row(lv.rows() - 1).maxCoeff(&best);
    const auto id = static_cast<TokenId>(best);
    if (id == stop) break;
    out.push_back(id);
    const TokenId one[1] = {id};
    Var e = model.embed_text(g, one);
    x.conservativeResize(x.rows() + 1, Eigen::NoChange);
    x.row(x.rows() - 1) = g.value(e).row(0);
  }
  return out;
}

// X^inp values for a rendered prompt, no gradient tracking.
template <class T>
Matrix<T> assemble_values(const MultimodalModel<T>& model, const TokenSeq& ids,
                          const std::vector<std::size_t>& slot_positions, const std::vector<const Matrix<T>*>& mels) {
  Graph<T> g(false);
  std::vector<Var> speech;
  for (const auto* mel : mels) speech.push_back(model.speech_features(g, *mel));
  return g.value(model.assemble(g, ids, slot_positions, speech));
}

}  // namespace vtb::nn
