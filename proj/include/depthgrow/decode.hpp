#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "depthgrow/batch.hpp"
#include "depthgrow/config.hpp"
#include "depthgrow/model.hpp"

namespace depthgrow {

// Log-softmax of one logits row, accumulated in double.
template <typename T>
std::vector<double> logprobs_from_row(const Tensor<T>& logits, int row) {
  int v = logits.dim(1);
  const T* r = logits.data() + static_cast<size_t>(row) * v;
  double m = static_cast<double>(r[0]);
  for (int j = 1; j < v; ++j) m = std::max(m, static_cast<double>(r[j]));
  double sum = 0.0;
  for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(r[j]) - m);
  double lse = m + std::log(sum);
  std::vector<double> out(static_cast<size_t>(v));
  for (int j = 0; j < v; ++j) out[static_cast<size_t>(j)] = static_cast<double>(r[j]) - lse;
  return out;
}

// Decoding view of the shallow path (net_S). Encoder state is computed once
// per sentence and shared across beam steps; every forward runs on its own
// eval-mode Graph, so views are safe to use from concurrent decode workers.
template <typename T>
class ShallowView {
 public:
  explicit ShallowView(const TransformerModel<T>& model) : m_(model) {}

  struct State {
    std::vector<int> src;
    typename TransformerModel<T>::EncodeOut enc;
  };

  State encode(const std::vector<int>& src) const {
    if (src.empty()) throw ContractError("decode: empty source");
    State st;
    st.src = src;
    PaddedBatch b = prefix_batch(src, {kBosId});
    Graph<T> g(false);
    st.enc = m_.encode(g, b, RunMode::kEval, /*with_top=*/false);
    return st;
  }

  std::vector<double> next_logprobs(const State& st, const std::vector<int>& prefix) const {
    PaddedBatch b = prefix_batch(st.src, prefix);
    Graph<T> g(false);
    auto out = m_.decode_shallow(g, b, st.enc, RunMode::kEval);
    return logprobs_from_row(out.logits, b.tgt_len - 1);
  }

  // Teacher-forced: one decoder pass over the whole sequence.
  double sequence_logprob(const State& st, const std::vector<int>& tokens) const {
    PaddedBatch b = teacher_batch(st.src, tokens);
    Graph<T> g(false);
    auto out = m_.decode_shallow(g, b, st.enc, RunMode::kEval);
    return sum_target_logprobs(out.logits, tokens);
  }

  int vocab() const { return m_.cfg.vocab_size; }
  int max_prefix_len() const { return m_.cfg.max_len; }

 protected:
  static PaddedBatch teacher_batch(const std::vector<int>& src, const std::vector<int>& tokens) {
    if (tokens.size() < 2 || tokens.front() != kBosId)
      throw ContractError("score_sequence: tokens must be BOS ... EOS");
    std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
    return prefix_batch(src, prefix);
  }

  template <typename Logits>
  static double sum_target_logprobs(const Logits& logits, const std::vector<int>& tokens) {
    double total = 0.0;
    for (size_t t = 0; t + 1 < tokens.size(); ++t) {
      auto lp = logprobs_from_row(logits, static_cast<int>(t));
      total += lp[static_cast<size_t>(tokens[t + 1])];
    }
    return total;
  }

  const TransformerModel<T>& m_;
};

// Decoding view of the full deep path (net_D), Eq. (1)-(3) end to end.
template <typename T>
class DeepView : public ShallowView<T> {
 public:
  explicit DeepView(const TransformerModel<T>& model) : ShallowView<T>(model) {
    if (!model.has_top()) throw ContractError("net_D view requires a grown model");
  }

  using State = typename ShallowView<T>::State;

  State encode(const std::vector<int>& src) const {
    if (src.empty()) throw ContractError("decode: empty source");
    State st;
    st.src = src;
    PaddedBatch b = prefix_batch(src, {kBosId});
    Graph<T> g(false);
    st.enc = this->m_.encode(g, b, RunMode::kEval, /*with_top=*/true);
    return st;
  }

  std::vector<double> next_logprobs(const State& st, const std::vector<int>& prefix) const {
    auto out = deep_logits(st, prefix);
    return logprobs_from_row(out, static_cast<int>(prefix.size()) - 1);
  }

  double sequence_logprob(const State& st, const std::vector<int>& tokens) const {
    std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
    if (tokens.size() < 2 || tokens.front() != kBosId)
      throw ContractError("score_sequence: tokens must be BOS ... EOS");
    auto out = deep_logits(st, prefix);
    return this->sum_target_logprobs(out, tokens);
  }

 private:
  Tensor<T> deep_logits(const State& st, const std::vector<int>& prefix) const {
    PaddedBatch b = prefix_batch(st.src, prefix);
    Graph<T> g(false);
    auto shallow = this->m_.decode_shallow(g, b, st.enc, RunMode::kEval);
    return this->m_.decode_deep(g, b, st.enc, shallow, RunMode::kEval).logits;
  }
};

// Average-logprob two-model ensemble over any two views with shared vocab.
template <typename ViewA, typename ViewB>
class EnsembleView {
 public:
  EnsembleView(const ViewA& a, const ViewB& b) : a_(a), b_(b) {
    if (a_.vocab() != b_.vocab()) throw ConfigError("ensemble: vocabulary sizes differ");
  }

  struct State {
    typename ViewA::State a;
    typename ViewB::State b;
  };

  State encode(const std::vector<int>& src) const { return {a_.encode(src), b_.encode(src)}; }

  std::vector<double> next_logprobs(const State& st, const std::vector<int>& prefix) const {
    auto la = a_.next_logprobs(st.a, prefix);
    auto lb = b_.next_logprobs(st.b, prefix);
    for (size_t i = 0; i < la.size(); ++i) la[i] = 0.5 * (la[i] + lb[i]);
    return la;
  }

  double sequence_logprob(const State& st, const std::vector<int>& tokens) const {
    return 0.5 * (a_.sequence_logprob(st.a, tokens) + b_.sequence_logprob(st.b, tokens));
  }

  int vocab() const { return a_.vocab(); }
  int max_prefix_len() const { return std::min(a_.max_prefix_len(), b_.max_prefix_len()); }

 private:
  const ViewA& a_;
  const ViewB& b_;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // BOS ... EOS (or truncated at the length cap)
  double logprob = 0.0;     // sum of token log-probabilities
  bool finished = false;
};

inline int generated_length(const std::vector<int>& tokens) {
  // tokens excluding BOS; at least 1 for normalization purposes
  return std::max(1, static_cast<int>(tokens.size()) - 1);
}

inline double length_penalized(double logprob, const std::vector<int>& tokens, double alpha) {
  return alpha == 0.0 ? logprob : logprob / std::pow(static_cast<double>(generated_length(tokens)), alpha);
}

inline bool lexicographically_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// Standard beam search over token log-probabilities. Every hypothesis that
// emits EOS is banked (not just those inside the beam), live hypotheses are
// pruned to `beam` per step, and anything still live at the length cap counts
// as finished. With length_penalty 0 the ranking key is the raw sum logprob.
template <typename View>
std::vector<BeamHypothesis> beam_search(const View& view, const std::vector<int>& src, int beam,
                                        int max_new_tokens, double length_penalty = 0.0) {
  if (src.empty()) throw ContractError("beam_search: empty source");
  if (beam < 1) throw ContractError("beam_search: beam must be >= 1");
  auto state = view.encode(src);
  // prefix rows occupy max_prefix_len positions at most
  max_new_tokens = std::min(max_new_tokens, view.max_prefix_len() - 1);
  if (max_new_tokens < 1) throw ContractError("beam_search: no room to generate");

  std::vector<BeamHypothesis> live = {{{kBosId}, 0.0, false}};
  std::vector<BeamHypothesis> finished;
  for (int step = 0; step < max_new_tokens && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    candidates.reserve(live.size() * static_cast<size_t>(view.vocab()));
    for (const auto& hyp : live) {
      auto lp = view.next_logprobs(state, hyp.tokens);
      for (int v = 0; v < view.vocab(); ++v) {
        if (v == kPadId || v == kBosId) continue;  // never generated
        BeamHypothesis next;
        next.tokens = hyp.tokens;
        next.tokens.push_back(v);
        next.logprob = hyp.logprob + lp[static_cast<size_t>(v)];
        next.finished = v == kEosId;
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [&](const auto& a, const auto& b) {
      double ka = length_penalized(a.logprob, a.tokens, length_penalty);
      double kb = length_penalized(b.logprob, b.tokens, length_penalty);
      if (ka != kb) return ka > kb;
      return lexicographically_less(a.tokens, b.tokens);
    });
    live.clear();
    for (auto& cand : candidates) {
      if (cand.finished)
        finished.push_back(std::move(cand));
      else if (static_cast<int>(live.size()) < beam)
        live.push_back(std::move(cand));
    }
  }
  for (auto& hyp : live) {
    hyp.finished = true;  // length cap reached
    finished.push_back(std::move(hyp));
  }
  std::sort(finished.begin(), finished.end(), [&](const auto& a, const auto& b) {
    double ka = length_penalized(a.logprob, a.tokens, length_penalty);
    double kb = length_penalized(b.logprob, b.tokens, length_penalty);
    if (ka != kb) return ka > kb;
    return lexicographically_less(a.tokens, b.tokens);
  });
  if (static_cast<int>(finished.size()) > beam) finished.resize(static_cast<size_t>(beam));
  return finished;
}

// Greedy decode: argmax token per step until EOS or the length cap.
template <typename View>
std::vector<int> greedy_decode(const View& view, const std::vector<int>& src, int max_new_tokens) {
  if (src.empty()) throw ContractError("greedy_decode: empty source");
  auto state = view.encode(src);
  max_new_tokens = std::min(max_new_tokens, view.max_prefix_len() - 1);
  std::vector<int> tokens = {kBosId};
  for (int step = 0; step < max_new_tokens; ++step) {
    auto lp = view.next_logprobs(state, tokens);
    int best = -1;
    for (int v = 0; v < view.vocab(); ++v) {
      if (v == kPadId || v == kBosId) continue;
      if (best < 0 || lp[static_cast<size_t>(v)] > lp[static_cast<size_t>(best)]) best = v;
    }
    tokens.push_back(best);
    if (best == kEosId) break;
  }
  return tokens;
}

// Teacher-forced log-probability of `tokens` (BOS ... EOS) under the view.
template <typename View>
double score_sequence(const View& view, const std::vector<int>& src, const std::vector<int>& tokens) {
  return view.sequence_logprob(view.encode(src), tokens);
}

struct RerankCandidate {
  std::vector<int> tokens;
  double score_s = 0.0;   // net_S sequence logprob
  double score_d = 0.0;   // net_D sequence logprob
  double rerank = 0.0;
  bool from_s = false;    // produced by the net_S searcher
  bool from_d = false;

  std::string provenance() const { return from_s && from_d ? "both" : (from_s ? "netS" : "netD"); }
};

struct RerankPool {
  std::vector<RerankCandidate> candidates;  // deduplicated by exact token sequence
};

inline double rerank_score(double score_s, double score_d, int length, const DecodeConfig& cfg) {
  double norm = cfg.rerank_normalize ? static_cast<double>(std::max(1, length)) : 1.0;
  return cfg.rerank_weight_s * (score_s / norm) + cfg.rerank_weight_d * (score_d / norm);
}

// Argmax over the pooled candidates; ties prefer the higher net_D score and
// then the lexicographically smaller token sequence. Pool order never
// affects the result.
inline const RerankCandidate& rerank_select(const RerankPool& pool) {
  if (pool.candidates.empty()) throw ContractError("rerank: empty candidate pool");
  const RerankCandidate* best = &pool.candidates[0];
  for (const auto& c : pool.candidates) {
    if (c.rerank > best->rerank ||
        (c.rerank == best->rerank &&
         (c.score_d > best->score_d ||
          (c.score_d == best->score_d && lexicographically_less(c.tokens, best->tokens)))))
      best = &c;
  }
  return *best;
}

inline int decode_length_cap(const DecodeConfig& cfg, int src_len) {
  return cfg.max_len_factor * src_len + cfg.max_len_offset;
}

struct DeepShallowResult {
  std::vector<int> tokens;
  RerankPool pool;
  const RerankCandidate* chosen = nullptr;  // points into pool
};

// Deep-shallow decoding: beam under net_S and net_D, pool and deduplicate,
// score every candidate under both views, pick the rerank argmax.
template <typename T>
DeepShallowResult deep_shallow_decode(const TransformerModel<T>& model, const std::vector<int>& src,
                                      const DecodeConfig& cfg) {
  ShallowView<T> view_s(model);
  DeepView<T> view_d(model);
  int cap = decode_length_cap(cfg, static_cast<int>(src.size()));

  auto beams_s = beam_search(view_s, src, cfg.beam, cap, cfg.length_penalty);
  auto beams_d = beam_search(view_d, src, cfg.beam, cap, cfg.length_penalty);

  DeepShallowResult result;
  std::map<std::vector<int>, size_t> index;
  auto add = [&](const BeamHypothesis& hyp, bool from_s) {
    auto it = index.find(hyp.tokens);
    if (it == index.end()) {
      RerankCandidate c;
      c.tokens = hyp.tokens;
      c.from_s = from_s;
      c.from_d = !from_s;
      index.emplace(hyp.tokens, result.pool.candidates.size());
      result.pool.candidates.push_back(std::move(c));
    } else {
      auto& c = result.pool.candidates[it->second];
      c.from_s = c.from_s || from_s;
      c.from_d = c.from_d || !from_s;
    }
  };
  for (const auto& h : beams_s) add(h, true);
  for (const auto& h : beams_d) add(h, false);

  auto state_s = view_s.encode(src);
  auto state_d = view_d.encode(src);
  for (auto& c : result.pool.candidates) {
    c.score_s = view_s.sequence_logprob(state_s, c.tokens);
    c.score_d = view_d.sequence_logprob(state_d, c.tokens);
    c.rerank = rerank_score(c.score_s, c.score_d, generated_length(c.tokens), cfg);
  }
  result.chosen = &rerank_select(result.pool);
  result.tokens = result.chosen->tokens;
  return result;
}

// Strips BOS/EOS for detokenization.
inline std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != kBosId && t != kEosId && t != kPadId) out.push_back(t);
  return out;
}

}  // namespace depthgrow
