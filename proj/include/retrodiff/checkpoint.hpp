#pragma once

// Binary checkpoint: "RDCK", u32 version, header (vocab, StageConfig,
// architecture, counters), tensor section, trailing CRC32 of everything
// before it. Integers and floats are little-endian.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "retrodiff/config.hpp"
#include "retrodiff/denoiser.hpp"
#include "retrodiff/error.hpp"
#include "retrodiff/molgraph.hpp"

namespace retrodiff {

inline constexpr char kCheckpointMagic[4] = {'R', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::vector<std::string> vocab_symbols;
  StageConfig stage;
  Architecture arch;
  std::map<std::string, std::uint64_t> counters;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

class Writer {
 public:
  template <typename U>
  void pod(U v) {
    char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    buf_.append(b, sizeof(U));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& b, std::size_t end) : buf_(b), end_(end) {}
  template <typename U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const char* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.raw(kCheckpointMagic, 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.vocab_symbols.size()));
  for (const auto& s : c.vocab_symbols) w.str(s);
  w.pod<std::uint64_t>(c.stage.T1);
  w.pod<std::uint64_t>(c.stage.T2);
  w.pod<double>(c.stage.mu);
  w.pod<std::uint64_t>(c.stage.n_g);
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(c.stage.prior));
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(c.stage.order));
  for (auto v : {c.arch.n_layer, c.arch.node_width, c.arch.edge_width, c.arch.global_width, c.arch.heads,
                 c.arch.atom_classes, c.arch.bond_classes})
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.counters.size()));
  for (const auto& [k, v] : c.counters) {
    w.str(k);
    w.pod<std::uint64_t>(v);
  }
  w.pod<std::uint64_t>(c.tensors.size());
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (auto d : t.dims) {
      w.pod<std::uint64_t>(d);
      count *= d;
    }
    if (count != t.data.size()) throw CheckpointError("tensor '" + t.name + "' data does not match its dims");
    w.raw(t.data.data(), t.data.size() * sizeof(float));
  }
  const std::uint32_t crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.pod<std::uint32_t>(crc);
  return w.bytes();
}

/// Verifies the checksum before decoding anything, so a corrupt file never
/// yields a partial checkpoint.
inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (detail::crc32_of(bytes.data(), body) != stored) throw CheckpointError("checkpoint checksum mismatch");
  detail::Reader r(bytes, body);
  char magic[4];
  r.raw(magic, 4);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto nv = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nv; ++i) c.vocab_symbols.push_back(r.str());
  c.stage.T1 = r.pod<std::uint64_t>();
  c.stage.T2 = r.pod<std::uint64_t>();
  c.stage.mu = r.pod<double>();
  c.stage.n_g = r.pod<std::uint64_t>();
  const auto prior = r.pod<std::uint8_t>(), order = r.pod<std::uint8_t>();
  if (prior > 1 || order > 2) throw CheckpointError("invalid stage enum in checkpoint header");
  c.stage.prior = static_cast<Prior>(prior);
  c.stage.order = static_cast<StageOrder>(order);
  for (auto* f : {&c.arch.n_layer, &c.arch.node_width, &c.arch.edge_width, &c.arch.global_width, &c.arch.heads,
                  &c.arch.atom_classes, &c.arch.bond_classes})
    *f = r.pod<std::uint32_t>();
  const auto nc = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nc; ++i) {
    auto k = r.str();
    c.counters[k] = r.pod<std::uint64_t>();
  }
  const auto nt = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nt; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.pod<std::uint64_t>());
      count *= t.dims.back();
    }
    if (count > (1ull << 32)) throw CheckpointError("tensor '" + t.name + "' too large");
    t.data.resize(count);
    r.raw(t.data.data(), count * sizeof(float));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint body");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const std::string bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

/// Rejects a checkpoint trained on a different vocabulary.
inline void require_vocab(const Checkpoint& c, const AtomVocab& vocab) {
  if (c.vocab_symbols.size() != vocab.size())
    throw CheckpointError("checkpoint vocabulary has " + std::to_string(c.vocab_symbols.size()) +
                          " categories, expected " + std::to_string(vocab.size()));
  if (c.vocab_symbols != vocab.symbols()) throw CheckpointError("checkpoint vocabulary symbols differ");
}

/// Appends a network's parameters (and Adam moments) under `prefix`.
inline void export_network(const Denoiser<float>& net, const std::string& prefix, Checkpoint& c) {
  c.counters[prefix + "adam_step"] = net.adam_step();
  auto put = [&](const std::string& name, const ad::Matrix<float>& m) {
    NamedTensor t{name, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
    t.data.assign(m.data(), m.data() + m.size());
    c.tensors.push_back(std::move(t));
  };
  for (const auto& p : net.tensors()) put(prefix + p.name, p.value);
  for (const auto& p : net.tensors()) put(prefix + "adam_m/" + p.name, p.m);
  for (const auto& p : net.tensors()) put(prefix + "adam_v/" + p.name, p.v);
}

inline Denoiser<float> import_network(const Checkpoint& c, const std::string& prefix) {
  Denoiser<float> net(c.arch);
  auto it = c.counters.find(prefix + "adam_step");
  if (it == c.counters.end()) throw CheckpointError("checkpoint lacks network '" + prefix + "'");
  net.set_adam_step(it->second);
  auto get = [&](const std::string& name, ad::Matrix<float>& m) {
    const auto& t = c.tensor(name);
    if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(m.rows()) ||
        t.dims[1] != static_cast<std::uint64_t>(m.cols()))
      throw CheckpointError("tensor '" + name + "' has an incompatible shape");
    std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(float));
  };
  for (auto& p : net.tensors()) {
    get(prefix + p.name, p.value);
    get(prefix + "adam_m/" + p.name, p.m);
    get(prefix + "adam_v/" + p.name, p.v);
  }
  return net;
}

}  // namespace retrodiff
