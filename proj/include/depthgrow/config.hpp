#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "depthgrow/errors.hpp"

namespace depthgrow {

using json = nlohmann::json;

namespace detail {

inline void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + section + "." + it.key() + "'");
}

template <typename V>
void get_to(const json& j, const char* key, V& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

struct ModelConfig {
  int d_model = 64;
  int d_ff = 256;
  int n_heads = 4;
  int n_bottom_blocks = 2;  // N
  int n_top_blocks = 0;     // M; 0 means no top module (plain shallow stack)
  int vocab_size = 64;
  double dropout = 0.1;
  int max_len = 64;
  int precision = 32;  // 32 or 64

  void validate() const {
    if (d_model < 1 || d_ff < 1) throw ConfigError("model dims must be positive");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
    if (n_bottom_blocks < 1) throw ConfigError("n_bottom_blocks must be >= 1");
    if (n_top_blocks < 0) throw ConfigError("n_top_blocks must be >= 0");
    if (vocab_size < 5) throw ConfigError("vocab_size must cover the 4 reserved ids");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"d_model", c.d_model},
           {"d_ff", c.d_ff},
           {"n_heads", c.n_heads},
           {"n_bottom_blocks", c.n_bottom_blocks},
           {"n_top_blocks", c.n_top_blocks},
           {"vocab_size", c.vocab_size},
           {"dropout", c.dropout},
           {"max_len", c.max_len},
           {"precision", c.precision}};
}

inline void from_json(const json& j, ModelConfig& c) {
  detail::check_keys(j, "model",
                     {"d_model", "d_ff", "n_heads", "n_bottom_blocks", "n_top_blocks", "vocab_size",
                      "dropout", "max_len", "precision"});
  detail::get_to(j, "d_model", c.d_model);
  detail::get_to(j, "d_ff", c.d_ff);
  detail::get_to(j, "n_heads", c.n_heads);
  detail::get_to(j, "n_bottom_blocks", c.n_bottom_blocks);
  detail::get_to(j, "n_top_blocks", c.n_top_blocks);
  detail::get_to(j, "vocab_size", c.vocab_size);
  detail::get_to(j, "dropout", c.dropout);
  detail::get_to(j, "max_len", c.max_len);
  detail::get_to(j, "precision", c.precision);
}

struct TrainConfig {
  int stage = 1;
  int max_steps = 2000;
  int batch_tokens = 1024;
  int warmup_steps = 400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double label_smoothing = 0.1;
  double dropout = -1.0;  // < 0 means: use the model's dropout rate
  uint64_t seed = 1;
  int checkpoint_every = 500;
  int log_every = 50;

  void validate() const {
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (batch_tokens < 2) throw ConfigError("batch_tokens too small");
    if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("label_smoothing must be in [0, 1)");
    if (dropout >= 1.0) throw ConfigError("dropout must be < 1");
    if (checkpoint_every < 1 || log_every < 1)
      throw ConfigError("checkpoint_every and log_every must be >= 1");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"stage", c.stage},
           {"max_steps", c.max_steps},
           {"batch_tokens", c.batch_tokens},
           {"warmup_steps", c.warmup_steps},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"label_smoothing", c.label_smoothing},
           {"dropout", c.dropout},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"log_every", c.log_every}};
}

inline void from_json(const json& j, TrainConfig& c) {
  detail::check_keys(j, "train",
                     {"stage", "max_steps", "batch_tokens", "warmup_steps", "adam_beta1", "adam_beta2",
                      "adam_eps", "label_smoothing", "dropout", "seed", "checkpoint_every", "log_every"});
  detail::get_to(j, "stage", c.stage);
  detail::get_to(j, "max_steps", c.max_steps);
  detail::get_to(j, "batch_tokens", c.batch_tokens);
  detail::get_to(j, "warmup_steps", c.warmup_steps);
  detail::get_to(j, "adam_beta1", c.adam_beta1);
  detail::get_to(j, "adam_beta2", c.adam_beta2);
  detail::get_to(j, "adam_eps", c.adam_eps);
  detail::get_to(j, "label_smoothing", c.label_smoothing);
  detail::get_to(j, "dropout", c.dropout);
  detail::get_to(j, "seed", c.seed);
  detail::get_to(j, "checkpoint_every", c.checkpoint_every);
  detail::get_to(j, "log_every", c.log_every);
}

struct DataConfig {
  std::string task;  // "" (file corpus) | copy | reverse | sort | noisy-copy
  double p_noise = 0.1;
  int vocab_size = 32;  // synthetic content tokens, excludes the 4 reserved ids
  int min_len = 3;
  int max_len = 10;
  int train_pairs = 20000;
  int valid_pairs = 1000;
  uint64_t seed = 7;
  std::string tokenizer = "whitespace";  // whitespace | char
  std::string src, tgt, valid_src, valid_tgt;
  int vocab_max_size = 32000;
  int vocab_min_freq = 1;

  void validate() const {
    if (!task.empty() && task != "copy" && task != "reverse" && task != "sort" && task != "noisy-copy")
      throw ConfigError("unknown data.task '" + task + "'");
    if (task.empty() && (src.empty() || tgt.empty()))
      throw ConfigError("data: either task or src/tgt file paths required");
    if (p_noise < 0.0 || p_noise >= 1.0) throw ConfigError("p_noise must be in [0, 1)");
    if (vocab_size < 1) throw ConfigError("data.vocab_size must be >= 1");
    if (min_len < 1 || max_len < min_len) throw ConfigError("bad synthetic length range");
    if (tokenizer != "whitespace" && tokenizer != "char")
      throw ConfigError("tokenizer must be whitespace or char");
  }
};

inline void to_json(json& j, const DataConfig& c) {
  j = json{{"task", c.task},         {"p_noise", c.p_noise},
           {"vocab_size", c.vocab_size}, {"min_len", c.min_len},
           {"max_len", c.max_len},   {"train_pairs", c.train_pairs},
           {"valid_pairs", c.valid_pairs}, {"seed", c.seed},
           {"tokenizer", c.tokenizer}, {"src", c.src},
           {"tgt", c.tgt},           {"valid_src", c.valid_src},
           {"valid_tgt", c.valid_tgt}, {"vocab_max_size", c.vocab_max_size},
           {"vocab_min_freq", c.vocab_min_freq}};
}

inline void from_json(const json& j, DataConfig& c) {
  detail::check_keys(j, "data",
                     {"task", "p_noise", "vocab_size", "min_len", "max_len", "train_pairs",
                      "valid_pairs", "seed", "tokenizer", "src", "tgt", "valid_src", "valid_tgt",
                      "vocab_max_size", "vocab_min_freq"});
  detail::get_to(j, "task", c.task);
  detail::get_to(j, "p_noise", c.p_noise);
  detail::get_to(j, "vocab_size", c.vocab_size);
  detail::get_to(j, "min_len", c.min_len);
  detail::get_to(j, "max_len", c.max_len);
  detail::get_to(j, "train_pairs", c.train_pairs);
  detail::get_to(j, "valid_pairs", c.valid_pairs);
  detail::get_to(j, "seed", c.seed);
  detail::get_to(j, "tokenizer", c.tokenizer);
  detail::get_to(j, "src", c.src);
  detail::get_to(j, "tgt", c.tgt);
  detail::get_to(j, "valid_src", c.valid_src);
  detail::get_to(j, "valid_tgt", c.valid_tgt);
  detail::get_to(j, "vocab_max_size", c.vocab_max_size);
  detail::get_to(j, "vocab_min_freq", c.vocab_min_freq);
}

struct DecodeConfig {
  int beam = 5;
  double length_penalty = 0.0;
  double rerank_weight_s = 0.5;
  double rerank_weight_d = 0.5;
  bool rerank_normalize = true;  // divide each view's logprob by sequence length
  int max_len_factor = 2;        // decode cap: factor * src_len + offset
  int max_len_offset = 8;

  void validate() const {
    if (beam < 1) throw ConfigError("beam must be >= 1");
    if (max_len_factor < 0 || max_len_offset < 1) throw ConfigError("bad decode length cap");
  }
};

inline void to_json(json& j, const DecodeConfig& c) {
  j = json{{"beam", c.beam},
           {"length_penalty", c.length_penalty},
           {"rerank_weight_s", c.rerank_weight_s},
           {"rerank_weight_d", c.rerank_weight_d},
           {"rerank_normalize", c.rerank_normalize},
           {"max_len_factor", c.max_len_factor},
           {"max_len_offset", c.max_len_offset}};
}

inline void from_json(const json& j, DecodeConfig& c) {
  detail::check_keys(j, "decode",
                     {"beam", "length_penalty", "rerank_weight_s", "rerank_weight_d",
                      "rerank_normalize", "max_len_factor", "max_len_offset"});
  detail::get_to(j, "beam", c.beam);
  detail::get_to(j, "length_penalty", c.length_penalty);
  detail::get_to(j, "rerank_weight_s", c.rerank_weight_s);
  detail::get_to(j, "rerank_weight_d", c.rerank_weight_d);
  detail::get_to(j, "rerank_normalize", c.rerank_normalize);
  detail::get_to(j, "max_len_factor", c.max_len_factor);
  detail::get_to(j, "max_len_offset", c.max_len_offset);
}

// Merged configuration: file values first, then command-line overrides.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DecodeConfig decode;

  void validate() const {
    model.validate();
    train.validate();
    data.validate();
    decode.validate();
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"model", c.model}, {"train", c.train}, {"data", c.data}, {"decode", c.decode}};
}

inline void from_json(const json& j, RunConfig& c) {
  detail::check_keys(j, "<root>", {"model", "train", "data", "decode"});
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("data")) j.at("data").get_to(c.data);
  if (j.contains("decode")) j.at("decode").get_to(c.decode);
}

}  // namespace depthgrow
