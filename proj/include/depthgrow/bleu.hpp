#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "depthgrow/errors.hpp"
#include "depthgrow/tensor.hpp"

namespace depthgrow {

// Additive corpus statistics for 4-gram BLEU.
struct BleuStats {
  int64_t matches[4] = {0, 0, 0, 0};  // clipped n-gram matches
  int64_t totals[4] = {0, 0, 0, 0};   // hypothesis n-gram counts
  int64_t hyp_len = 0;
  int64_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& other) {
    for (int n = 0; n < 4; ++n) {
      matches[n] += other.matches[n];
      totals[n] += other.totals[n];
    }
    hyp_len += other.hyp_len;
    ref_len += other.ref_len;
    return *this;
  }
};

inline BleuStats sentence_bleu_stats(const std::vector<std::string>& hyp,
                                     const std::vector<std::string>& ref) {
  BleuStats s;
  s.hyp_len = static_cast<int64_t>(hyp.size());
  s.ref_len = static_cast<int64_t>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    if (static_cast<int>(hyp.size()) < n) break;
    std::map<std::vector<std::string>, int64_t> ref_counts;
    for (size_t i = 0; i + n <= ref.size(); ++i)
      ++ref_counts[std::vector<std::string>(ref.begin() + static_cast<long>(i),
                                            ref.begin() + static_cast<long>(i + n))];
    std::map<std::vector<std::string>, int64_t> hyp_counts;
    for (size_t i = 0; i + n <= hyp.size(); ++i)
      ++hyp_counts[std::vector<std::string>(hyp.begin() + static_cast<long>(i),
                                            hyp.begin() + static_cast<long>(i + n))];
    for (const auto& [gram, count] : hyp_counts) {
      s.totals[n - 1] += count;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

struct BleuResult {
  double score = 0.0;       // [0, 100]
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1.0;
  double ratio = 0.0;
  int64_t hyp_len = 0;
  int64_t ref_len = 0;

  // "BLEU = <xx.xx> (p1/p2/p3/p4, BP, ratio, hyp_len, ref_len)"
  std::string format() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "BLEU = %.2f (%.1f/%.1f/%.1f/%.1f, BP %.3f, ratio %.3f, hyp_len %lld, ref_len %lld)",
                  score, precisions[0] * 100, precisions[1] * 100, precisions[2] * 100,
                  precisions[3] * 100, brevity_penalty, ratio, static_cast<long long>(hyp_len),
                  static_cast<long long>(ref_len));
    return buf;
  }
};

inline BleuResult bleu_from_stats(const BleuStats& s) {
  BleuResult r;
  r.hyp_len = s.hyp_len;
  r.ref_len = s.ref_len;
  r.ratio = s.ref_len > 0 ? static_cast<double>(s.hyp_len) / static_cast<double>(s.ref_len) : 0.0;
  r.brevity_penalty =
      s.hyp_len >= s.ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
  // Geometric mean over orders that have any hypothesis n-grams; an order
  // with zero matches over a positive total zeroes the whole score.
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (s.totals[n] == 0) continue;
    r.precisions[n] = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    if (s.matches[n] == 0) return r;  // score stays 0
    log_sum += std::log(r.precisions[n]);
    ++orders;
  }
  if (orders == 0 || s.hyp_len == 0) return r;
  r.score = 100.0 * r.brevity_penalty * std::exp(log_sum / orders);
  return r;
}

// Tokenized, case-sensitive corpus BLEU with a single reference per
// hypothesis. Tokens compare by exact bytes.
inline BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                              const std::vector<std::vector<std::string>>& refs) {
  if (hyps.empty()) throw ContractError("corpus_bleu: empty corpus");
  if (hyps.size() != refs.size())
    throw ContractError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                        std::to_string(refs.size()) + " references");
  BleuStats total;
  for (size_t i = 0; i < hyps.size(); ++i) total += sentence_bleu_stats(hyps[i], refs[i]);
  return bleu_from_stats(total);
}

// Fraction of non-pad target positions where the argmax logit hits the target.
template <typename T>
double token_accuracy(const Tensor<T>& logits, const std::vector<int>& targets, int pad_id) {
  if (logits.rank() != 2 || static_cast<size_t>(logits.dim(0)) != targets.size())
    throw ShapeError("token_accuracy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  int v = logits.dim(1);
  int64_t correct = 0, live = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    const T* row = logits.data() + i * static_cast<size_t>(v);
    int best = 0;
    for (int j = 1; j < v; ++j)
      if (row[j] > row[best]) best = j;
    ++live;
    if (best == targets[i]) ++correct;
  }
  if (live == 0) throw DataError("token_accuracy: every position is padding");
  return static_cast<double>(correct) / static_cast<double>(live);
}

inline double token_accuracy(const std::vector<int>& predictions, const std::vector<int>& targets,
                             int pad_id) {
  if (predictions.size() != targets.size())
    throw ShapeError("token_accuracy: prediction/target length mismatch");
  int64_t correct = 0, live = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    ++live;
    if (predictions[i] == targets[i]) ++correct;
  }
  if (live == 0) throw DataError("token_accuracy: every position is padding");
  return static_cast<double>(correct) / static_cast<double>(live);
}

}  // namespace depthgrow
