#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "depthgrow/batch.hpp"
#include "depthgrow/transformer.hpp"

namespace depthgrow {

// Which parts of the model run with dropout. The frozen bottom module always
// runs dropout-free in stage 2, so the shallow path stays deterministic.
enum class RunMode { kEval, kTrainStage1, kTrainStage2 };

// Encoder–decoder Transformer with an optional grown top module.
//
// With n_top_blocks == 0 this is a plain N-block model (the stage-1 shallow
// network, or a direct-stacked baseline). After grow() it holds a frozen
// bottom module plus a trainable top module composed as
//   h1 = enc1(x)            s1 = dec1(y,      attn1 over h1)   logits_S = s1 W
//   h2 = enc2(x + h1)       s2 = dec2(y + s1, attn2 over h2)   logits_D = s2 W
// with x, y the embedded (and position-encoded) source/target sequences and
// W the single output projection shared by both logit heads.
template <typename T>
class TransformerModel {
 public:
  explicit TransformerModel(ModelConfig config) : cfg(std::move(config)) {
    cfg.validate();
    embed = Parameter<T>("embed.weight", Tensor<T>(Shape{cfg.vocab_size, cfg.d_model}));
    for (int i = 0; i < cfg.n_bottom_blocks; ++i) {
      bottom_enc.emplace_back("bottom.enc." + std::to_string(i), cfg);
      bottom_dec.emplace_back("bottom.dec." + std::to_string(i), cfg);
    }
    bottom_enc_norm = LayerNormParams<T>("bottom.enc_norm", cfg.d_model);
    bottom_dec_norm = LayerNormParams<T>("bottom.dec_norm", cfg.d_model);
    for (int i = 0; i < cfg.n_top_blocks; ++i) {
      top_enc.emplace_back("top.enc." + std::to_string(i), cfg);
      top_dec.emplace_back("top.dec." + std::to_string(i), cfg);
    }
    if (has_top()) {
      top_enc_norm = LayerNormParams<T>("top.enc_norm", cfg.d_model);
      top_dec_norm = LayerNormParams<T>("top.dec_norm", cfg.d_model);
    }
    out_proj = Parameter<T>("out_proj.weight", Tensor<T>(Shape{cfg.d_model, cfg.vocab_size}));
    pos = PositionalEncoding<T>(cfg.max_len, cfg.d_model);
  }

  bool has_top() const { return cfg.n_top_blocks > 0; }

  // Fresh initialization of every parameter (used for stage-1 / from-scratch
  // models). Xavier-uniform weights, unit gains, zero biases.
  void init_parameters(uint64_t seed) {
    Rng rng(seed);
    init_embedding(rng);
    for (auto& blk : bottom_enc) blk.init(rng, false);
    for (auto& blk : bottom_dec) blk.init(rng, false);
    bottom_enc_norm.init();
    bottom_dec_norm.init();
    init_top(rng, false);
    init_out_proj(rng);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    out.push_back(&embed);
    for (auto& blk : bottom_enc) blk.collect(out);
    bottom_enc_norm.collect(out);
    for (auto& blk : bottom_dec) blk.collect(out);
    bottom_dec_norm.collect(out);
    for (auto& blk : top_enc) blk.collect(out);
    for (auto& blk : top_dec) blk.collect(out);
    if (has_top()) {
      top_enc_norm.collect(out);
      top_dec_norm.collect(out);
    }
    out.push_back(&out_proj);
    return out;
  }

  std::vector<const Parameter<T>*> parameters() const {
    auto mut = const_cast<TransformerModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
  }

  Parameter<T>* find_parameter(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->tensor.zero_grad();
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto* p : parameters()) n += p->tensor.numel();
    return n;
  }

  // The dropout rate used in training modes; trainers may override the
  // model's configured rate without touching the config.
  void set_dropout_override(double p) { dropout_override_ = p; }
  T effective_dropout() const {
    return static_cast<T>(dropout_override_ >= 0 ? dropout_override_ : cfg.dropout);
  }

  struct EncodeOut {
    Tensor<T> h1;  // bottom encoder output, memory of attn1
    Tensor<T> h2;  // top encoder output, memory of attn2 (undefined when no top)
  };

  // Eq. (1). The cross-module residual feeds the same embedded source tensor
  // to both enc1 and the top module input.
  EncodeOut encode(Graph<T>& g, const PaddedBatch& b, RunMode mode, bool with_top = true) const {
    const bool bottom_train = mode == RunMode::kTrainStage1;
    const bool top_train = mode == RunMode::kTrainStage2;
    const T p = effective_dropout();
    auto x = embed_packed(g, b.src, b.size, b.src_len, bottom_train);
    auto masks = key_padding_masks<T>(b.src_len, b.src_len, b.src_lens);
    EncodeOut out;
    auto h = x;
    for (const auto& blk : bottom_enc)
      h = blk.forward(g, h, b.size, b.src_len, masks, p, bottom_train);
    out.h1 = bottom_enc_norm.forward(g, h);
    if (with_top && has_top()) {
      auto top_in = g.dropout(g.add(x, out.h1), p, top_train);
      for (const auto& blk : top_enc)
        top_in = blk.forward(g, top_in, b.size, b.src_len, masks, p, top_train);
      out.h2 = top_enc_norm.forward(g, top_in);
    }
    return out;
  }

  struct ShallowOut {
    Tensor<T> y_embed;  // embedded target prefix (shared with the deep path)
    Tensor<T> s1;       // bottom decoder states
    Tensor<T> logits;   // logits_S = s1 W
  };

  // Eq. (2). attn1 reads keys/values from h1; a function of frozen
  // parameters only once the model is grown.
  ShallowOut decode_shallow(Graph<T>& g, const PaddedBatch& b, const EncodeOut& enc,
                            RunMode mode) const {
    const bool bottom_train = mode == RunMode::kTrainStage1;
    const T p = effective_dropout();
    ShallowOut out;
    out.y_embed = embed_packed(g, b.tgt_in, b.size, b.tgt_len, bottom_train);
    std::vector<Tensor<T>> self_masks = {causal_mask<T>(b.tgt_len)};
    auto cross_masks = key_padding_masks<T>(b.tgt_len, b.src_len, b.src_lens);
    auto h = out.y_embed;
    for (const auto& blk : bottom_dec)
      h = blk.forward(g, h, enc.h1, b.size, b.tgt_len, b.src_len, self_masks, cross_masks, p,
                      bottom_train);
    out.s1 = bottom_dec_norm.forward(g, h);
    out.logits = g.matmul(out.s1, out_proj.tensor);
    return out;
  }

  struct DeepOut {
    Tensor<T> s2;
    Tensor<T> logits;  // logits_D = s2 W, same W as logits_S
  };

  // Eq. (3). The top decoder input at step t is embed(y)_t + s1_t; attn2
  // reads keys/values from h2.
  DeepOut decode_deep(Graph<T>& g, const PaddedBatch& b, const EncodeOut& enc,
                      const ShallowOut& shallow, RunMode mode) const {
    if (!has_top()) throw ContractError("decode_deep: model has no top module");
    if (!enc.h2.defined()) throw ContractError("decode_deep: encode() ran without the top module");
    if (shallow.s1.dim(0) != b.size * b.tgt_len)
      throw ContractError("decode_deep: s1 length does not match the target prefix");
    const bool top_train = mode == RunMode::kTrainStage2 || mode == RunMode::kTrainStage1;
    const T p = effective_dropout();
    std::vector<Tensor<T>> self_masks = {causal_mask<T>(b.tgt_len)};
    auto cross_masks = key_padding_masks<T>(b.tgt_len, b.src_len, b.src_lens);
    auto h = g.dropout(g.add(shallow.y_embed, shallow.s1), p, top_train);
    for (const auto& blk : top_dec)
      h = blk.forward(g, h, enc.h2, b.size, b.tgt_len, b.src_len, self_masks, cross_masks, p,
                      top_train);
    DeepOut out;
    out.s2 = top_dec_norm.forward(g, h);
    out.logits = g.matmul(out.s2, out_proj.tensor);
    return out;
  }

  // Teacher-forced logits of the shallow path (enc1 + dec1).
  Tensor<T> forward_net_s(Graph<T>& g, const PaddedBatch& b, RunMode mode) const {
    auto enc = encode(g, b, mode, /*with_top=*/false);
    return decode_shallow(g, b, enc, mode).logits;
  }

  // Teacher-forced logits of the full deep path (Eq. 1-3).
  Tensor<T> forward_net_d(Graph<T>& g, const PaddedBatch& b, RunMode mode) const {
    auto enc = encode(g, b, mode);
    auto shallow = decode_shallow(g, b, enc, mode);
    return decode_deep(g, b, enc, shallow, mode).logits;
  }

  ModelConfig cfg;
  Parameter<T> embed;
  std::vector<EncoderBlockParams<T>> bottom_enc;
  std::vector<DecoderBlockParams<T>> bottom_dec;
  LayerNormParams<T> bottom_enc_norm, bottom_dec_norm;
  std::vector<EncoderBlockParams<T>> top_enc;
  std::vector<DecoderBlockParams<T>> top_dec;
  LayerNormParams<T> top_enc_norm, top_dec_norm;
  Parameter<T> out_proj;
  PositionalEncoding<T> pos;

  // embedding lookup * sqrt(d) + positional encoding (+ dropout in training)
  Tensor<T> embed_packed(Graph<T>& g, const std::vector<int>& ids, int batch, int len,
                         bool dropout_active) const {
    if (len > cfg.max_len)
      throw DataError("sequence length " + std::to_string(len) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
    auto e = g.scale(g.embedding(embed.tensor, ids), std::sqrt(static_cast<T>(cfg.d_model)));
    e = g.add(e, pos.packed(batch, len));
    return g.dropout(e, effective_dropout(), dropout_active);
  }

  void init_embedding(Rng& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (int64_t i = 0; i < embed.tensor.numel(); ++i)
      embed.tensor.data()[i] = static_cast<T>(rng.normal() * std);
  }

  void init_out_proj(Rng& rng) {
    double bound = std::sqrt(6.0 / (cfg.d_model + cfg.vocab_size));
    for (int64_t i = 0; i < out_proj.tensor.numel(); ++i)
      out_proj.tensor.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  }

  void init_top(Rng& rng, bool zero_output_projections) {
    for (auto& blk : top_enc) blk.init(rng, zero_output_projections);
    for (auto& blk : top_dec) blk.init(rng, zero_output_projections);
    if (has_top()) {
      top_enc_norm.init();
      top_dec_norm.init();
    }
  }

 private:
  double dropout_override_ = -1.0;
};

// Stacks a fresh top module of M encoder and M decoder blocks onto a trained
// shallow model. Bottom parameters, embeddings and the output projection are
// copied verbatim and frozen; the top module is freshly initialized with
// zeroed block output projections so each new block starts as the identity.
template <typename T>
TransformerModel<T> grow(const TransformerModel<T>& shallow, int m, uint64_t init_seed) {
  if (m < 1) throw ConfigError("grow: top module needs at least one block");
  if (shallow.has_top()) throw ConfigError("grow: model already has a top module");
  ModelConfig cfg = shallow.cfg;
  cfg.n_top_blocks = m;
  TransformerModel<T> grown(cfg);
  for (const auto* src : shallow.parameters()) {
    auto* dst = grown.find_parameter(src->name);
    if (!dst) throw CheckpointError("grow: missing parameter " + src->name);
    dst->tensor.vec() = src->tensor.vec();
    dst->set_trainable(false);
  }
  Rng rng(init_seed);
  grown.init_top(rng, /*zero_output_projections=*/true);
  return grown;
}

struct FreezeAuditReport {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
  std::vector<std::string> violations;  // frozen parameters whose bytes changed
  bool clean() const { return violations.empty(); }
};

template <typename T>
uint64_t tensor_content_hash(const Tensor<T>& t) {
  return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(T));
}

// Baseline hashes of all frozen parameters, captured at grow/load time.
template <typename T>
std::map<std::string, uint64_t> frozen_parameter_hashes(const TransformerModel<T>& model) {
  std::map<std::string, uint64_t> out;
  for (const auto* p : model.parameters())
    if (!p->trainable) out[p->name] = tensor_content_hash(p->tensor);
  return out;
}

template <typename T>
FreezeAuditReport freeze_audit(const TransformerModel<T>& model,
                               const std::map<std::string, uint64_t>& baseline) {
  FreezeAuditReport report;
  for (const auto* p : model.parameters()) {
    if (p->trainable) {
      report.trainable.push_back(p->name);
      continue;
    }
    report.frozen.push_back(p->name);
    auto it = baseline.find(p->name);
    if (it == baseline.end() || it->second != tensor_content_hash(p->tensor))
      report.violations.push_back(p->name);
  }
  return report;
}

}  // namespace depthgrow
