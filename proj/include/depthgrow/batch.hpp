#pragma once

#include <vector>

#include "depthgrow/errors.hpp"

namespace depthgrow {

// Reserved vocabulary ids, stable across every vocab.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

// A padded batch of id sequences. src is [size x src_len] row-major, tgt_in
// is BOS-prefixed and tgt_out EOS-suffixed, both [size x tgt_len] with
// tgt_out[t] == tgt_in[t + 1] at non-pad positions. True lengths (pad masks)
// are carried alongside: position j of row i is padding iff j >= lens[i].
struct PaddedBatch {
  int size = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
  std::vector<int> src_lens;
  std::vector<int> tgt_lens;  // length including the EOS/BOS slot

  int64_t target_tokens() const {
    int64_t n = 0;
    for (int l : tgt_lens) n += l;
    return n;
  }
};

// Decode-time batch: an already BOS-prefixed target prefix, no tgt_out.
inline PaddedBatch prefix_batch(const std::vector<int>& src_ids,
                                const std::vector<int>& prefix_with_bos) {
  if (src_ids.empty()) throw ContractError("empty source sequence");
  if (prefix_with_bos.empty() || prefix_with_bos[0] != kBosId)
    throw ContractError("decoder prefix must start with BOS");
  PaddedBatch b;
  b.size = 1;
  b.src_len = static_cast<int>(src_ids.size());
  b.src = src_ids;
  b.src_lens = {b.src_len};
  b.tgt_in = prefix_with_bos;
  b.tgt_len = static_cast<int>(prefix_with_bos.size());
  b.tgt_lens = {b.tgt_len};
  return b;
}

// Single sentence-pair batch used by decoding and scoring.
inline PaddedBatch single_pair_batch(const std::vector<int>& src_ids,
                                     const std::vector<int>& tgt_ids) {
  if (src_ids.empty()) throw ContractError("empty source sequence");
  PaddedBatch b;
  b.size = 1;
  b.src_len = static_cast<int>(src_ids.size());
  b.src = src_ids;
  b.src_lens = {b.src_len};
  b.tgt_in.assign(1, kBosId);
  b.tgt_in.insert(b.tgt_in.end(), tgt_ids.begin(), tgt_ids.end());
  b.tgt_out = tgt_ids;
  b.tgt_out.push_back(kEosId);
  b.tgt_len = static_cast<int>(b.tgt_in.size());
  b.tgt_lens = {b.tgt_len};
  return b;
}

}  // namespace depthgrow
