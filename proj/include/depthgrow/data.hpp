#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "depthgrow/batch.hpp"
#include "depthgrow/config.hpp"
#include "depthgrow/errors.hpp"
#include "depthgrow/rng.hpp"
#include "depthgrow/vocab.hpp"

namespace depthgrow {

using StringPair = std::pair<std::string, std::string>;
using IdPair = std::pair<std::vector<int>, std::vector<int>>;

enum class TokenizerMode { kWhitespace, kChar };

inline TokenizerMode tokenizer_mode_from(const std::string& name) {
  if (name == "whitespace") return TokenizerMode::kWhitespace;
  if (name == "char") return TokenizerMode::kChar;
  throw ConfigError("unknown tokenizer '" + name + "'");
}

// whitespace: split on runs of spaces/tabs. char: one token per UTF-8
// codepoint, spaces included, so detokenization is plain concatenation.
inline std::vector<std::string> tokenize(const std::string& line, TokenizerMode mode) {
  std::vector<std::string> out;
  if (mode == TokenizerMode::kWhitespace) {
    size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) out.push_back(line.substr(i, j - i));
      i = j;
    }
  } else {
    size_t i = 0;
    while (i < line.size()) {
      unsigned char c = static_cast<unsigned char>(line[i]);
      size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
      if (i + len > line.size()) len = 1;
      out.push_back(line.substr(i, len));
      i += len;
    }
  }
  return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens, TokenizerMode mode) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (mode == TokenizerMode::kWhitespace && i) out += ' ';
    out += tokens[i];
  }
  return out;
}

struct SyntheticTaskSpec {
  enum class Kind { kCopy, kReverse, kSort, kNoisyCopy };
  Kind kind = Kind::kCopy;
  double p_noise = 0.0;  // noisy-copy only
  int vocab_size = 32;   // content tokens "0" .. "vocab_size-1"
  int min_len = 3;
  int max_len = 10;
  uint64_t seed = 7;

  static Kind kind_from(const std::string& name) {
    if (name == "copy") return Kind::kCopy;
    if (name == "reverse") return Kind::kReverse;
    if (name == "sort") return Kind::kSort;
    if (name == "noisy-copy") return Kind::kNoisyCopy;
    throw ConfigError("unknown synthetic task '" + name + "'");
  }
};

// Deterministic per (spec, n): pair i of a given spec never changes.
inline std::vector<StringPair> gen_synthetic(const SyntheticTaskSpec& spec, int n) {
  if (spec.vocab_size < 1 || spec.min_len < 1 || spec.max_len < spec.min_len)
    throw ConfigError("gen_synthetic: bad task spec");
  Rng rng(spec.seed);
  std::vector<StringPair> pairs;
  pairs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int len = rng.uniform_int(spec.min_len, spec.max_len);
    std::vector<int> src(static_cast<size_t>(len));
    for (auto& t : src) t = rng.uniform_int(0, spec.vocab_size - 1);
    std::vector<int> tgt = src;
    switch (spec.kind) {
      case SyntheticTaskSpec::Kind::kCopy:
        break;
      case SyntheticTaskSpec::Kind::kReverse:
        std::reverse(tgt.begin(), tgt.end());
        break;
      case SyntheticTaskSpec::Kind::kSort:
        std::sort(tgt.begin(), tgt.end());
        break;
      case SyntheticTaskSpec::Kind::kNoisyCopy:
        // each position is replaced by a different token with prob p_noise
        for (auto& t : tgt) {
          if (rng.uniform() < spec.p_noise) {
            int repl = rng.uniform_int(0, spec.vocab_size - 2);
            t = repl >= t ? repl + 1 : repl;
          }
        }
        break;
    }
    auto join = [](const std::vector<int>& ids) {
      std::string s;
      for (size_t k = 0; k < ids.size(); ++k) {
        if (k) s += ' ';
        s += std::to_string(ids[k]);
      }
      return s;
    };
    pairs.emplace_back(join(src), join(tgt));
  }
  return pairs;
}

// Line-aligned UTF-8 files; CRLF line ends are normalized away.
inline std::vector<StringPair> load_parallel_corpus(const std::string& src_path,
                                                    const std::string& tgt_path) {
  auto read_lines = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return lines;
  };
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw DataError("corpus line count mismatch: " + src_path + " has " +
                    std::to_string(src.size()) + " lines, " + tgt_path + " has " +
                    std::to_string(tgt.size()));
  std::vector<StringPair> pairs;
  pairs.reserve(src.size());
  for (size_t i = 0; i < src.size(); ++i) pairs.emplace_back(std::move(src[i]), std::move(tgt[i]));
  return pairs;
}

// Tokenize + id-encode a parallel corpus, dropping pairs that are empty or
// longer than the model can embed (max_len for src, max_len - 1 for tgt to
// leave room for the BOS/EOS slot).
inline std::vector<IdPair> encode_pairs(const std::vector<StringPair>& pairs, const Vocab& vocab,
                                        TokenizerMode mode, int max_src_len, int max_tgt_len) {
  std::vector<IdPair> out;
  out.reserve(pairs.size());
  for (const auto& [src, tgt] : pairs) {
    auto s = vocab.encode(tokenize(src, mode));
    auto t = vocab.encode(tokenize(tgt, mode));
    if (s.empty() || t.empty()) continue;
    if (static_cast<int>(s.size()) > max_src_len || static_cast<int>(t.size()) > max_tgt_len)
      continue;
    out.emplace_back(std::move(s), std::move(t));
  }
  return out;
}

// Token-count-based batching with length bucketing (bucket width 8). Every
// pair appears in exactly one batch; order is a pure function of (seed,
// epoch).
inline std::vector<PaddedBatch> make_batches(const std::vector<IdPair>& pairs, int batch_tokens,
                                             uint64_t seed, int64_t epoch) {
  std::vector<PaddedBatch> batches;
  if (pairs.empty()) return batches;
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(splitmix64(seed) ^ splitmix64(static_cast<uint64_t>(epoch) + 1));
  for (size_t i = order.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  auto padded_len = [&](size_t idx) {
    return std::max(pairs[idx].first.size(), pairs[idx].second.size() + 1);
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return padded_len(a) / 8 < padded_len(b) / 8; });

  std::vector<std::vector<size_t>> groups;
  std::vector<size_t> cur;
  size_t cur_max = 0;
  for (size_t idx : order) {
    size_t cand_max = std::max(cur_max, padded_len(idx));
    if (!cur.empty() && (cur.size() + 1) * cand_max > static_cast<size_t>(batch_tokens)) {
      groups.push_back(std::move(cur));
      cur.clear();
      cur_max = 0;
      cand_max = padded_len(idx);
    }
    cur.push_back(idx);
    cur_max = cand_max;
  }
  if (!cur.empty()) groups.push_back(std::move(cur));

  for (size_t i = groups.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(groups[i - 1], groups[j]);
  }

  for (const auto& group : groups) {
    PaddedBatch b;
    b.size = static_cast<int>(group.size());
    int max_src = 0, max_tgt = 0;
    for (size_t idx : group) {
      max_src = std::max(max_src, static_cast<int>(pairs[idx].first.size()));
      max_tgt = std::max(max_tgt, static_cast<int>(pairs[idx].second.size()) + 1);
    }
    b.src_len = max_src;
    b.tgt_len = max_tgt;
    b.src.assign(static_cast<size_t>(b.size) * max_src, kPadId);
    b.tgt_in.assign(static_cast<size_t>(b.size) * max_tgt, kPadId);
    b.tgt_out.assign(static_cast<size_t>(b.size) * max_tgt, kPadId);
    for (size_t r = 0; r < group.size(); ++r) {
      const auto& [src, tgt] = pairs[group[r]];
      std::copy(src.begin(), src.end(), b.src.begin() + static_cast<long>(r * max_src));
      auto* in_row = b.tgt_in.data() + r * max_tgt;
      auto* out_row = b.tgt_out.data() + r * max_tgt;
      in_row[0] = kBosId;
      for (size_t t = 0; t < tgt.size(); ++t) {
        in_row[t + 1] = tgt[t];
        out_row[t] = tgt[t];
      }
      out_row[tgt.size()] = kEosId;
      b.src_lens.push_back(static_cast<int>(src.size()));
      b.tgt_lens.push_back(static_cast<int>(tgt.size()) + 1);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Builds a vocabulary from both sides of a tokenized corpus.
inline Vocab build_vocab(const std::vector<StringPair>& pairs, TokenizerMode mode,
                         int max_size = 1 << 30, int min_freq = 1) {
  std::vector<std::vector<std::string>> lines;
  lines.reserve(pairs.size() * 2);
  for (const auto& [src, tgt] : pairs) {
    lines.push_back(tokenize(src, mode));
    lines.push_back(tokenize(tgt, mode));
  }
  return Vocab::build(lines, max_size, min_freq);
}

}  // namespace depthgrow
