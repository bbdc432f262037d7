#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mapdp/common.hpp"
#include "mapdp/model.hpp"
#include "mapdp/optimizer.hpp"
#include "mapdp/pruning.hpp"

namespace mapdp {

namespace wire {

constexpr char kMagic[8] = {'M', 'A', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

inline uint32_t crc32(const uint8_t* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

class Writer {
 public:
  std::vector<uint8_t> buf;

  template <typename U>
  void u(U v) {
    static_assert(std::is_unsigned_v<U>);
    for (size_t i = 0; i < sizeof(U); ++i)
      buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void i64(int64_t v) { u(static_cast<uint64_t>(v)); }
  void f64(double v) { u(std::bit_cast<uint64_t>(v)); }
  void f32(float v) { u(std::bit_cast<uint32_t>(v)); }
  void str(const std::string& s) {
    u(static_cast<uint32_t>(s.size()));
    buf.insert(buf.end(), s.begin(), s.end());
  }
  void bytes(const std::vector<uint8_t>& b) {
    buf.insert(buf.end(), b.begin(), b.end());
  }
  template <typename T>
  void scalar(T v) {
    if constexpr (sizeof(T) == 4) f32(static_cast<float>(v));
    else f64(static_cast<double>(v));
  }
  template <typename T>
  void scalars(const std::vector<T>& v) {
    for (T x : v) scalar(x);
  }
};

class Reader {
 public:
  Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

  template <typename U>
  U u() {
    static_assert(std::is_unsigned_v<U>);
    need(sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u<uint64_t>()); }
  double f64() { return std::bit_cast<double>(u<uint64_t>()); }
  float f32() { return std::bit_cast<float>(u<uint32_t>()); }
  std::string str() {
    const uint32_t n = u<uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> b(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
    return b;
  }
  template <typename T>
  T scalar() {
    if constexpr (sizeof(T) == 4) return static_cast<T>(f32());
    else return static_cast<T>(f64());
  }
  template <typename T>
  std::vector<T> scalars(size_t n) {
    std::vector<T> v(n);
    for (auto& x : v) x = scalar<T>();
    return v;
  }
  bool done() const { return pos_ == len_; }

 private:
  void need(size_t n) {
    if (pos_ + n > len_) throw IoError("checkpoint payload truncated");
  }
  const uint8_t* data_;
  size_t len_;
  size_t pos_ = 0;
};

inline std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> out((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= uint8_t(1u << (i % 8));
  return out;
}

inline std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& packed,
                                        size_t n) {
  std::vector<uint8_t> bits(n, 0);
  for (size_t i = 0; i < n; ++i)
    bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

/// Atomic file write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path,
                              const void* data, size_t len) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

}  // namespace wire

/// Full training snapshot sufficient for a bit-exact resume.
template <typename T>
struct Checkpoint {
  std::vector<LayerSpec> arch;
  uint64_t run_seed = 0;
  int64_t epoch = 0;      // epochs completed
  int64_t iteration = 0;  // iterations completed
  double best_acc = 0.0;
  int64_t best_epoch = -1;
  double last_acc = 0.0;

  std::vector<std::string> param_names;
  std::vector<std::vector<size_t>> param_shapes;
  std::vector<uint8_t> param_prunable;
  std::vector<std::vector<T>> param_data;

  bool prune_enabled = false;
  Variant variant = Variant::Dense;
  double threshold = 0.0;
  double ratio = 0.0;
  double strength = 1.0;
  int64_t update_every = 16;
  int64_t exploit_start = 0;
  bool frozen = false;
  NormScope scope = NormScope::Global;
  NormKind kind = NormKind::MagnitudeMinMax;
  std::vector<std::vector<uint8_t>> masks;      // per prunable param
  std::vector<std::vector<T>> attentions;

  SgdConfig sgd;
  std::vector<std::vector<T>> velocity;

  std::string rng_state;

  std::vector<uint8_t> serialize() const {
    wire::Writer w;
    w.u<uint8_t>(static_cast<uint8_t>(sizeof(T)));
    w.u<uint32_t>(static_cast<uint32_t>(arch.size()));
    for (const auto& l : arch) {
      w.u<uint64_t>(l.in_dim);
      w.u<uint64_t>(l.out_dim);
      w.u<uint8_t>(l.act == Activation::Relu ? 1 : 0);
    }
    w.u<uint64_t>(run_seed);
    w.i64(epoch);
    w.i64(iteration);
    w.f64(best_acc);
    w.i64(best_epoch);
    w.f64(last_acc);

    w.u<uint32_t>(static_cast<uint32_t>(param_names.size()));
    for (size_t p = 0; p < param_names.size(); ++p) {
      w.str(param_names[p]);
      w.u<uint32_t>(static_cast<uint32_t>(param_shapes[p].size()));
      for (size_t d : param_shapes[p]) w.u<uint64_t>(d);
      w.u<uint8_t>(param_prunable[p]);
      w.scalars(param_data[p]);
    }

    w.u<uint8_t>(prune_enabled ? 1 : 0);
    w.u<uint8_t>(static_cast<uint8_t>(variant));
    w.f64(threshold);
    w.f64(ratio);
    w.f64(strength);
    w.i64(update_every);
    w.i64(exploit_start);
    w.u<uint8_t>(frozen ? 1 : 0);
    w.u<uint8_t>(scope == NormScope::PerLayer ? 1 : 0);
    w.u<uint8_t>(kind == NormKind::RankLinear ? 1 : 0);
    w.u<uint32_t>(static_cast<uint32_t>(masks.size()));
    for (size_t m = 0; m < masks.size(); ++m) {
      w.u<uint64_t>(masks[m].size());
      w.bytes(wire::pack_bits(masks[m]));
      w.scalars(attentions[m]);
    }

    w.f64(sgd.lr);
    w.f64(sgd.momentum);
    w.f64(sgd.weight_decay);
    w.u<uint8_t>(sgd.nesterov ? 1 : 0);
    w.u<uint8_t>(sgd.decay_all ? 1 : 0);
    w.u<uint32_t>(static_cast<uint32_t>(sgd.lr_milestones.size()));
    for (const auto& [ep, mult] : sgd.lr_milestones) {
      w.i64(ep);
      w.f64(mult);
    }
    for (const auto& v : velocity) {
      w.u<uint64_t>(v.size());
      w.scalars(v);
    }
    w.str(rng_state);
    return std::move(w.buf);
  }

  static Checkpoint deserialize(const std::vector<uint8_t>& payload) {
    wire::Reader r(payload.data(), payload.size());
    Checkpoint c;
    const uint8_t prec = r.u<uint8_t>();
    if (prec != sizeof(T))
      throw IoError("checkpoint precision " + std::to_string(prec * 8) +
                    "-bit does not match requested " +
                    std::to_string(sizeof(T) * 8) + "-bit");
    const uint32_t n_layers = r.u<uint32_t>();
    for (uint32_t i = 0; i < n_layers; ++i) {
      LayerSpec l;
      l.in_dim = r.u<uint64_t>();
      l.out_dim = r.u<uint64_t>();
      l.act = r.u<uint8_t>() ? Activation::Relu : Activation::None;
      c.arch.push_back(l);
    }
    c.run_seed = r.u<uint64_t>();
    c.epoch = r.i64();
    c.iteration = r.i64();
    c.best_acc = r.f64();
    c.best_epoch = r.i64();
    c.last_acc = r.f64();

    const uint32_t n_params = r.u<uint32_t>();
    for (uint32_t p = 0; p < n_params; ++p) {
      c.param_names.push_back(r.str());
      const uint32_t nd = r.u<uint32_t>();
      std::vector<size_t> shape;
      size_t numel = 1;
      for (uint32_t d = 0; d < nd; ++d) {
        shape.push_back(r.u<uint64_t>());
        numel *= shape.back();
      }
      c.param_shapes.push_back(shape);
      c.param_prunable.push_back(r.u<uint8_t>());
      c.param_data.push_back(r.scalars<T>(numel));
    }

    c.prune_enabled = r.u<uint8_t>() != 0;
    c.variant = static_cast<Variant>(r.u<uint8_t>());
    c.threshold = r.f64();
    c.ratio = r.f64();
    c.strength = r.f64();
    c.update_every = r.i64();
    c.exploit_start = r.i64();
    c.frozen = r.u<uint8_t>() != 0;
    c.scope = r.u<uint8_t>() ? NormScope::PerLayer : NormScope::Global;
    c.kind = r.u<uint8_t>() ? NormKind::RankLinear : NormKind::MagnitudeMinMax;
    const uint32_t n_masks = r.u<uint32_t>();
    for (uint32_t m = 0; m < n_masks; ++m) {
      const size_t n = r.u<uint64_t>();
      c.masks.push_back(wire::unpack_bits(r.bytes((n + 7) / 8), n));
      c.attentions.push_back(r.scalars<T>(n));
    }

    c.sgd.lr = r.f64();
    c.sgd.momentum = r.f64();
    c.sgd.weight_decay = r.f64();
    c.sgd.nesterov = r.u<uint8_t>() != 0;
    c.sgd.decay_all = r.u<uint8_t>() != 0;
    const uint32_t n_ms = r.u<uint32_t>();
    for (uint32_t i = 0; i < n_ms; ++i) {
      const int ep = static_cast<int>(r.i64());
      const double mult = r.f64();
      c.sgd.lr_milestones.emplace_back(ep, mult);
    }
    for (uint32_t p = 0; p < n_params; ++p) {
      const size_t n = r.u<uint64_t>();
      c.velocity.push_back(r.scalars<T>(n));
    }
    c.rng_state = r.str();
    if (!r.done()) throw IoError("trailing bytes in checkpoint payload");
    return c;
  }

  void save(const std::string& path) const {
    std::vector<uint8_t> out;
    out.insert(out.end(), wire::kMagic, wire::kMagic + 8);
    wire::Writer hdr;
    hdr.u<uint32_t>(wire::kVersion);
    out.insert(out.end(), hdr.buf.begin(), hdr.buf.end());
    const auto payload = serialize();
    out.insert(out.end(), payload.begin(), payload.end());
    wire::Writer crc;
    crc.u<uint32_t>(wire::crc32(payload.data(), payload.size()));
    out.insert(out.end(), crc.buf.begin(), crc.buf.end());
    wire::write_file_atomic(path, out.data(), out.size());
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw IoError("checkpoint too short: " + path);
    if (std::memcmp(bytes.data(), wire::kMagic, 8) != 0)
      throw IoError("bad checkpoint magic in " + path);
    wire::Reader hdr(bytes.data() + 8, 4);
    const uint32_t version = hdr.u<uint32_t>();
    if (version != wire::kVersion)
      throw IoError("unsupported checkpoint version " + std::to_string(version));
    const size_t payload_len = bytes.size() - 16;
    const uint8_t* payload = bytes.data() + 12;
    wire::Reader tail(bytes.data() + bytes.size() - 4, 4);
    const uint32_t stored = tail.u<uint32_t>();
    if (wire::crc32(payload, payload_len) != stored)
      throw IoError("checkpoint checksum mismatch in " + path);
    return deserialize(std::vector<uint8_t>(payload, payload + payload_len));
  }
};

}  // namespace mapdp
