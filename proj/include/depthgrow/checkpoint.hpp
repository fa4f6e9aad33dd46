#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthgrow/config.hpp"
#include "depthgrow/model.hpp"

namespace depthgrow {

// On-disk layout: magic "DGNM", one version byte, manifest byte length as
// 8-byte little-endian, the JSON manifest, then the payload of concatenated
// little-endian float32 tensors. Payload dtype is always f32 on disk; 64-bit
// runs downcast on save.
inline constexpr char kCheckpointMagic[4] = {'D', 'G', 'N', 'M'};
inline constexpr uint8_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::string dtype = "f32";
  uint64_t offset = 0;  // element offset into the payload
  bool trainable = true;
  std::string hash;  // FNV-1a 64 over the tensor's payload bytes, hex
};

inline void to_json(json& j, const TensorRecord& r) {
  j = json{{"name", r.name},       {"shape", r.shape},         {"dtype", r.dtype},
           {"offset", r.offset},   {"trainable", r.trainable}, {"hash", r.hash}};
}

inline void from_json(const json& j, TensorRecord& r) {
  j.at("name").get_to(r.name);
  j.at("shape").get_to(r.shape);
  j.at("dtype").get_to(r.dtype);
  j.at("offset").get_to(r.offset);
  j.at("trainable").get_to(r.trainable);
  j.at("hash").get_to(r.hash);
}

namespace detail {

inline std::string hash_hex(const void* data, size_t n) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(data, n)));
  return buf;
}

inline void write_u64_le(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void floats_to_le_bytes(const std::vector<float>& v, std::vector<unsigned char>& out) {
  out.resize(v.size() * 4);
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &v[i], 4);
    out[i * 4 + 0] = static_cast<unsigned char>(bits & 0xFF);
    out[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    out[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    out[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
  }
}

inline void le_bytes_to_floats(const std::vector<unsigned char>& bytes, std::vector<float>& out) {
  out.resize(bytes.size() / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    uint32_t bits = static_cast<uint32_t>(bytes[i * 4 + 0]) |
                    (static_cast<uint32_t>(bytes[i * 4 + 1]) << 8) |
                    (static_cast<uint32_t>(bytes[i * 4 + 2]) << 16) |
                    (static_cast<uint32_t>(bytes[i * 4 + 3]) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
}

}  // namespace detail

struct Checkpoint {
  int format_version = kCheckpointVersion;
  int stage = 1;
  int64_t step = 0;
  ModelConfig config;
  std::vector<TensorRecord> table;
  std::vector<float> payload;

  template <typename T>
  static Checkpoint from_model(const TransformerModel<T>& model, int stage, int64_t step) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.step = step;
    ckpt.config = model.cfg;
    for (const auto* p : model.parameters()) {
      TensorRecord rec;
      rec.name = p->name;
      rec.shape = p->tensor.shape();
      rec.offset = ckpt.payload.size();
      rec.trainable = p->trainable;
      size_t start = ckpt.payload.size();
      ckpt.payload.resize(start + static_cast<size_t>(p->tensor.numel()));
      for (int64_t i = 0; i < p->tensor.numel(); ++i)
        ckpt.payload[start + static_cast<size_t>(i)] = static_cast<float>(p->tensor.data()[i]);
      std::vector<unsigned char> bytes;
      detail::floats_to_le_bytes(
          {ckpt.payload.begin() + static_cast<long>(start), ckpt.payload.end()}, bytes);
      rec.hash = detail::hash_hex(bytes.data(), bytes.size());
      ckpt.table.push_back(std::move(rec));
    }
    return ckpt;
  }

  // Copies values and trainable flags into a model with a matching config.
  template <typename T>
  void load_into(TransformerModel<T>& model) const {
    if (model.cfg.d_model != config.d_model || model.cfg.vocab_size != config.vocab_size ||
        model.cfg.n_heads != config.n_heads || model.cfg.d_ff != config.d_ff ||
        model.cfg.n_bottom_blocks != config.n_bottom_blocks ||
        model.cfg.n_top_blocks != config.n_top_blocks)
      throw ConfigError("checkpoint: model config does not match checkpoint config");
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& rec : table) by_name[rec.name] = &rec;
    for (auto* p : model.parameters()) {
      auto it = by_name.find(p->name);
      if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor " + p->name);
      const auto& rec = *it->second;
      if (rec.shape != p->tensor.shape())
        throw CheckpointError("checkpoint: shape mismatch for " + p->name + ": " +
                              shape_str(rec.shape) + " vs " + shape_str(p->tensor.shape()));
      if (rec.offset + static_cast<uint64_t>(p->tensor.numel()) > payload.size())
        throw CheckpointError("checkpoint: payload truncated at " + p->name);
      for (int64_t i = 0; i < p->tensor.numel(); ++i)
        p->tensor.data()[i] = static_cast<T>(payload[rec.offset + static_cast<size_t>(i)]);
      p->set_trainable(rec.trainable);
    }
  }

  // Builds the model described by the manifest. The template parameter picks
  // the in-memory precision; callers dispatch on config.precision.
  template <typename T>
  TransformerModel<T> to_model() const {
    TransformerModel<T> model(config);
    load_into(model);
    return model;
  }

  // Grow-time hashes of the frozen parameters, as recorded in the manifest.
  std::map<std::string, uint64_t> frozen_hash_baseline() const {
    std::map<std::string, uint64_t> out;
    for (const auto& rec : table)
      if (!rec.trainable) out[rec.name] = std::stoull(rec.hash, nullptr, 16);
    return out;
  }

  json manifest() const {
    return json{{"format_version", format_version},
                {"stage", stage},
                {"step", step},
                {"model", config},
                {"tensors", table}};
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, 4);
    out.put(static_cast<char>(kCheckpointVersion));
    std::string m = manifest().dump();
    detail::write_u64_le(out, m.size());
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    std::vector<unsigned char> bytes;
    detail::floats_to_le_bytes(payload, bytes);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
      throw CheckpointError("checkpoint: bad magic in " + path);
    int version = in.get();
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    uint64_t manifest_len = detail::read_u64_le(in);
    std::string manifest_text(manifest_len, '\0');
    in.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    if (!in) throw CheckpointError("checkpoint: truncated manifest in " + path);

    Checkpoint ckpt;
    json j;
    try {
      j = json::parse(manifest_text);
    } catch (const json::exception& e) {
      throw CheckpointError(std::string("checkpoint: manifest parse error: ") + e.what());
    }
    j.at("format_version").get_to(ckpt.format_version);
    j.at("stage").get_to(ckpt.stage);
    j.at("step").get_to(ckpt.step);
    j.at("model").get_to(ckpt.config);
    j.at("tensors").get_to(ckpt.table);

    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    detail::le_bytes_to_floats(bytes, ckpt.payload);

    // Manifest integrity: offsets in order and non-overlapping, hashes match.
    uint64_t expected_offset = 0;
    for (const auto& rec : ckpt.table) {
      if (rec.offset != expected_offset)
        throw CheckpointError("checkpoint: tensor " + rec.name + " offset out of order");
      uint64_t n = static_cast<uint64_t>(shape_numel(rec.shape));
      if (rec.offset + n > ckpt.payload.size())
        throw CheckpointError("checkpoint: payload shorter than manifest for " + rec.name);
      std::string h = detail::hash_hex(bytes.data() + rec.offset * 4, static_cast<size_t>(n) * 4);
      if (h != rec.hash)
        throw CheckpointError("checkpoint: content hash mismatch for " + rec.name);
      expected_offset += n;
    }
    if (expected_offset != ckpt.payload.size())
      throw CheckpointError("checkpoint: trailing payload bytes");
    return ckpt;
  }
};

}  // namespace depthgrow
