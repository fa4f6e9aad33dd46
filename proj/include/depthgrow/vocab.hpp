#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "depthgrow/batch.hpp"
#include "depthgrow/errors.hpp"

namespace depthgrow {

// Token <-> id bijection with four reserved ids (PAD, BOS, EOS, UNK).
// Content tokens are ranked by corpus frequency, ties broken lexicographically.
class Vocab {
 public:
  Vocab() : id_to_token_{"<pad>", "<bos>", "<eos>", "<unk>"} { rebuild_index(); }

  static Vocab build(const std::vector<std::vector<std::string>>& corpus, int max_size = 1 << 30,
                     int min_freq = 1) {
    std::map<std::string, int64_t> freq;
    for (const auto& line : corpus)
      for (const auto& tok : line) ++freq[tok];
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, count] : ranked) {
      if (count < min_freq) break;
      if (v.size() >= max_size + 4) break;
      v.id_to_token_.push_back(tok);
    }
    v.rebuild_index();
    return v;
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Unknown tokens map to UNK.
  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw ContractError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int i : ids) tokens.push_back(token(i));
    return tokens;
  }

  // One content token per line; id = line number - 1 + 4.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("vocab: cannot write " + path);
    for (size_t i = 4; i < id_to_token_.size(); ++i) out << id_to_token_[i] << "\n";
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("vocab: cannot read " + path);
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      v.id_to_token_.push_back(line);
    }
    v.rebuild_index();
    return v;
  }

  bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void rebuild_index() {
    token_to_id_.clear();
    for (size_t i = 0; i < id_to_token_.size(); ++i) {
      if (token_to_id_.count(id_to_token_[i]))
        throw DataError("vocab: duplicate token '" + id_to_token_[i] + "'");
      token_to_id_[id_to_token_[i]] = static_cast<int>(i);
    }
  }

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace depthgrow
