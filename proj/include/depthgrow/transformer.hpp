#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "depthgrow/autodiff.hpp"
#include "depthgrow/config.hpp"
#include "depthgrow/rng.hpp"
#include "depthgrow/tensor.hpp"

namespace depthgrow {

// Additive attention mask value for blocked positions. Large and finite:
// exp(x - rowmax) underflows to exactly 0 for unmasked rows, so blocked keys
// get weight 0.0 and perturbing them cannot change the output bits, while a
// fully blocked row degrades to uniform weights instead of NaN.
template <typename T>
inline constexpr T kBlocked = T(-1e30);

// [t x t] causal mask: position i may attend to positions <= i.
template <typename T>
Tensor<T> causal_mask(int t) {
  Tensor<T> m(Shape{t, t});
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at(i, j) = kBlocked<T>;
  return m;
}

// [tq x tk] mask blocking key positions >= true_len (padding).
template <typename T>
Tensor<T> key_padding_mask(int tq, int tk, int true_len) {
  Tensor<T> m(Shape{tq, tk});
  for (int i = 0; i < tq; ++i)
    for (int j = true_len; j < tk; ++j) m.at(i, j) = kBlocked<T>;
  return m;
}

template <typename T>
std::vector<Tensor<T>> key_padding_masks(int tq, int tk, const std::vector<int>& true_lens) {
  std::vector<Tensor<T>> out;
  out.reserve(true_lens.size());
  for (int l : true_lens) out.push_back(key_padding_mask<T>(tq, tk, l));
  return out;
}

// y = x W + b
template <typename T>
struct LinearParams {
  Parameter<T> w;  // [in x out]
  Parameter<T> b;  // [out]

  LinearParams() = default;
  LinearParams(const std::string& prefix, int in, int out)
      : w(prefix + ".w", Tensor<T>(Shape{in, out})), b(prefix + ".b", Tensor<T>(Shape{out})) {}

  void init(Rng& rng, bool zero_weight = false) {
    if (zero_weight) {
      std::fill_n(w.tensor.data(), w.tensor.numel(), T(0));
    } else {
      double bound = std::sqrt(6.0 / (w.tensor.dim(0) + w.tensor.dim(1)));
      for (int64_t i = 0; i < w.tensor.numel(); ++i)
        w.tensor.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    std::fill_n(b.tensor.data(), b.tensor.numel(), T(0));
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x) const {
    return g.add_bias(g.matmul(x, w.tensor), b.tensor);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gain;
  Parameter<T> bias;
  T eps = T(1e-5);

  LayerNormParams() = default;
  LayerNormParams(const std::string& prefix, int d)
      : gain(prefix + ".gain", Tensor<T>(Shape{d}, T(1))), bias(prefix + ".bias", Tensor<T>(Shape{d})) {}

  void init() {
    std::fill_n(gain.tensor.data(), gain.tensor.numel(), T(1));
    std::fill_n(bias.tensor.data(), bias.tensor.numel(), T(0));
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x) const {
    return g.layer_norm(x, gain.tensor, bias.tensor, eps);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

// softmax(Q K^T / sqrt(d_k) + mask) V for one head of one sentence.
template <typename T>
Tensor<T> scaled_dot_attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v, const Tensor<T>& mask,
                               T attn_dropout = T(0), bool train = false) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0))
    throw ShapeError("scaled_dot_attention: incompatible shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (mask.defined() && (mask.rank() != 2 || mask.dim(0) != q.dim(0) || mask.dim(1) != k.dim(0)))
    throw ShapeError("scaled_dot_attention: mask shape " + shape_str(mask.shape()) +
                     " does not cover " + std::to_string(q.dim(0)) + " x " +
                     std::to_string(k.dim(0)));
  auto scores = g.scale(g.matmul(q, g.transpose(k)), T(1) / std::sqrt(static_cast<T>(q.dim(1))));
  if (mask.defined()) scores = g.add(scores, mask);
  auto weights = g.dropout(g.softmax(scores, -1), attn_dropout, train);
  return g.matmul(weights, v);
}

template <typename T>
struct AttentionParams {
  LinearParams<T> q, k, v, o;
  int n_heads = 1;

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, int d_model, int heads)
      : q(prefix + ".q", d_model, d_model),
        k(prefix + ".k", d_model, d_model),
        v(prefix + ".v", d_model, d_model),
        o(prefix + ".o", d_model, d_model),
        n_heads(heads) {}

  void init(Rng& rng, bool zero_output_projection) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng, zero_output_projection);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

// Multi-head attention over a packed batch. xq is [batch*tq x d], xkv is
// [batch*tk x d]; row r belongs to sentence r / t. `masks` holds one [tq x tk]
// additive mask per sentence, or a single mask shared by all sentences.
template <typename T>
Tensor<T> multi_head_attention(Graph<T>& g, const AttentionParams<T>& p, const Tensor<T>& xq,
                               const Tensor<T>& xkv, int batch, int tq, int tk,
                               const std::vector<Tensor<T>>& masks, T attn_dropout, bool train) {
  const int d = xq.dim(1);
  const int dk = d / p.n_heads;
  auto qs = p.q.forward(g, xq);
  auto ks = p.k.forward(g, xkv);
  auto vs = p.v.forward(g, xkv);
  std::vector<Tensor<T>> rows;
  rows.reserve(static_cast<size_t>(batch));
  std::vector<Tensor<T>> heads(static_cast<size_t>(p.n_heads));
  for (int b = 0; b < batch; ++b) {
    auto qb = g.slice_rows(qs, b * tq, tq);
    auto kb = g.slice_rows(ks, b * tk, tk);
    auto vb = g.slice_rows(vs, b * tk, tk);
    const Tensor<T>& mask = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
    for (int h = 0; h < p.n_heads; ++h) {
      heads[static_cast<size_t>(h)] =
          scaled_dot_attention(g, g.slice_cols(qb, h * dk, dk), g.slice_cols(kb, h * dk, dk),
                               g.slice_cols(vb, h * dk, dk), mask, attn_dropout, train);
    }
    rows.push_back(p.n_heads == 1 ? heads[0] : g.concat_cols(heads));
  }
  auto ctx = batch == 1 ? rows[0] : g.concat_rows(rows);
  return p.o.forward(g, ctx);
}

// Pre-norm encoder block: x + SelfAttn(LN(x)), then x + FFN(LN(x)).
template <typename T>
struct EncoderBlockParams {
  LayerNormParams<T> ln1, ln2;
  AttentionParams<T> self_attn;
  LinearParams<T> ff1, ff2;

  EncoderBlockParams() = default;
  EncoderBlockParams(const std::string& prefix, const ModelConfig& cfg)
      : ln1(prefix + ".ln1", cfg.d_model),
        ln2(prefix + ".ln2", cfg.d_model),
        self_attn(prefix + ".self_attn", cfg.d_model, cfg.n_heads),
        ff1(prefix + ".ffn.w1", cfg.d_model, cfg.d_ff),
        ff2(prefix + ".ffn.w2", cfg.d_ff, cfg.d_model) {}

  void init(Rng& rng, bool zero_output_projections) {
    ln1.init();
    ln2.init();
    self_attn.init(rng, zero_output_projections);
    ff1.init(rng);
    ff2.init(rng, zero_output_projections);
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& x, int batch, int t,
                    const std::vector<Tensor<T>>& self_masks, T dropout, bool train) const {
    auto normed = ln1.forward(g, x);
    auto attn = multi_head_attention(g, self_attn, normed, normed, batch, t, t, self_masks,
                                     dropout, train);
    auto h = g.add(x, g.dropout(attn, dropout, train));
    auto ff = ff2.forward(g, g.relu(ff1.forward(g, ln2.forward(g, h))));
    return g.add(h, g.dropout(ff, dropout, train));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    ln1.collect(out);
    ln2.collect(out);
    self_attn.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

// Pre-norm decoder block: causal self-attention, cross-attention over the
// encoder memory (keys/values), feed-forward; each with a residual.
template <typename T>
struct DecoderBlockParams {
  LayerNormParams<T> ln1, ln2, ln3;
  AttentionParams<T> self_attn, cross_attn;
  LinearParams<T> ff1, ff2;

  DecoderBlockParams() = default;
  DecoderBlockParams(const std::string& prefix, const ModelConfig& cfg)
      : ln1(prefix + ".ln1", cfg.d_model),
        ln2(prefix + ".ln2", cfg.d_model),
        ln3(prefix + ".ln3", cfg.d_model),
        self_attn(prefix + ".self_attn", cfg.d_model, cfg.n_heads),
        cross_attn(prefix + ".cross_attn", cfg.d_model, cfg.n_heads),
        ff1(prefix + ".ffn.w1", cfg.d_model, cfg.d_ff),
        ff2(prefix + ".ffn.w2", cfg.d_ff, cfg.d_model) {}

  void init(Rng& rng, bool zero_output_projections) {
    ln1.init();
    ln2.init();
    ln3.init();
    self_attn.init(rng, zero_output_projections);
    cross_attn.init(rng, zero_output_projections);
    ff1.init(rng);
    ff2.init(rng, zero_output_projections);
  }

  Tensor<T> forward(Graph<T>& g, const Tensor<T>& y, const Tensor<T>& memory, int batch, int tq,
                    int tk, const std::vector<Tensor<T>>& self_masks,
                    const std::vector<Tensor<T>>& cross_masks, T dropout, bool train) const {
    auto n1 = ln1.forward(g, y);
    auto self = multi_head_attention(g, self_attn, n1, n1, batch, tq, tq, self_masks, dropout, train);
    auto h = g.add(y, g.dropout(self, dropout, train));
    auto n2 = ln2.forward(g, h);
    auto cross =
        multi_head_attention(g, cross_attn, n2, memory, batch, tq, tk, cross_masks, dropout, train);
    h = g.add(h, g.dropout(cross, dropout, train));
    auto ff = ff2.forward(g, g.relu(ff1.forward(g, ln3.forward(g, h))));
    return g.add(h, g.dropout(ff, dropout, train));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    ln1.collect(out);
    ln2.collect(out);
    ln3.collect(out);
    self_attn.collect(out);
    cross_attn.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

// Sinusoidal position table; a pure function of (position, dimension).
template <typename T>
class PositionalEncoding {
 public:
  PositionalEncoding() = default;
  PositionalEncoding(int max_len, int d_model) : table_(Shape{max_len, d_model}) {
    for (int pos = 0; pos < max_len; ++pos) {
      for (int i = 0; i < d_model; i += 2) {
        double freq = std::exp(-std::log(10000.0) * i / d_model);
        table_.at(pos, i) = static_cast<T>(std::sin(pos * freq));
        if (i + 1 < d_model) table_.at(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
      }
    }
  }

  const Tensor<T>& table() const { return table_; }

  // Constant [batch*t x d] tensor: every sentence restarts at position 0.
  Tensor<T> packed(int batch, int t) const {
    Tensor<T> out(Shape{batch * t, table_.dim(1)});
    const int d = table_.dim(1);
    for (int b = 0; b < batch; ++b)
      std::copy_n(table_.data(), static_cast<size_t>(t) * d,
                  out.data() + static_cast<size_t>(b) * t * d);
    return out;
  }

 private:
  Tensor<T> table_;
};

}  // namespace depthgrow
