#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//   "FSFCKPT\0"  u32 version
//   config:   u64 in_channels, channels, units, input_size, hidden; f64 slope
//   metadata: u64 epoch, u64 seed, f64 val_loss
//   u64 tensor count, then per tensor: u32 name length, name bytes,
//             u32 rank, u64 extents[rank], f64 values
//   u64 FNV-1a hash of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/nn/model.hpp"

namespace fsf::nn {

inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  double val_loss = 0;
};

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw FormatError("checkpoint truncated");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(p_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), k);
    pos_ += k;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::vector<unsigned char> serialize_checkpoint(const Model<T>& model, const CheckpointMeta& meta) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& c = model.config();
  w.u64(c.in_channels);
  w.u64(c.channels);
  w.u64(c.units);
  w.u64(c.input_size);
  w.u64(c.hidden);
  w.f64(c.slope);
  w.u64(meta.epoch);
  w.u64(meta.seed);
  w.f64(meta.val_loss);
  const auto named = model.params().named();
  w.u64(named.size());
  for (const auto& [name, t] : named) {
    w.u32(std::uint32_t(name.size()));
    w.raw(name.data(), name.size());
    w.u32(std::uint32_t(t->rank()));
    for (auto e : t->shape()) w.u64(e);
    for (auto v : t->vec()) w.f64(double(v));
  }
  const auto h = fnv1a64(w.bytes().data(), w.bytes().size());
  w.u64(h);
  return std::move(w.bytes());
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  CheckpointMeta meta;
};

template <typename T>
LoadedCheckpoint<T> deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 4 + 8) throw FormatError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes.data() + body, 8);
  if (tail.u64() != fnv1a64(bytes.data(), body)) throw FormatError("checkpoint checksum mismatch");

  detail::ByteReader r(bytes.data(), body);
  r.str(sizeof kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  c.in_channels = r.u64();
  c.channels = r.u64();
  c.units = r.u64();
  c.input_size = r.u64();
  c.hidden = r.u64();
  c.slope = r.f64();
  try {
    validate_model_config(c);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  CheckpointMeta meta;
  meta.epoch = r.u64();
  meta.seed = r.u64();
  meta.val_loss = r.f64();

  auto params = ModelParams<T>::zeros(c);
  auto named = params.named();
  const auto count = r.u64();
  if (count != named.size()) throw FormatError("checkpoint tensor count does not match its config");
  for (auto& [name, t] : named) {
    const auto len = r.u32();
    const auto got = r.str(len);
    if (got != name) throw FormatError("checkpoint tensor '" + got + "' where '" + name + "' was expected");
    const auto rank = r.u32();
    Shape s(rank);
    for (auto& e : s) e = r.u64();
    if (s != t->shape()) throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(s));
    for (auto& v : t->vec()) v = T(r.f64());
  }
  if (r.pos() != body) throw FormatError("trailing bytes in checkpoint");
  return {Model<T>(c, std::move(params)), meta};
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const CheckpointMeta& meta) {
  const auto bytes = serialize_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint<T>(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace fsf::nn
