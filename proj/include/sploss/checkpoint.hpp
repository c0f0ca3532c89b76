#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "SPNET1"                      6-byte magic
//   u32 format version            currently 1
//   u32 layer count
//   per layer: u32 in, u32 out, u32 activation code
//              f64[out*in] weights row-major, f64[out] bias
//   u8 optimizer flag             0 = none, 1 = block follows
//   optimizer block: u32 kind, f64 lr, f64 beta1, f64 beta2, f64 epsilon, u64 steps,
//                    then (adam only) m and v for every parameter tensor in layer order
//                    (weights, bias per layer)
//
// Trailing bytes are rejected.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/network.hpp"
#include "sploss/optimizer.hpp"

namespace sploss {

inline constexpr char kCheckpointMagic[6] = {'S', 'P', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network net;
  std::optional<Optimizer> optimizer;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const Tensor& t) {
    for (double v : t.data()) f64(v);
  }
  const std::vector<unsigned char>& buffer() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  Tensor tensor(std::size_t rows, std::size_t cols) {
    // Sizes come from the file; check them before allocating.
    if (rows * cols > (buf_.size() - pos_) / 8)
      throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    Tensor t(rows, cols);
    for (double& v : t.data()) v = f64();
    return t;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t position() const { return pos_; }
  const unsigned char* peek() const { return buf_.data() + pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> encode_checkpoint(const Network& net, const Optimizer* opt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(net.depth()));
  for (const auto& l : net.layers()) {
    w.u32(static_cast<std::uint32_t>(l.in_dim()));
    w.u32(static_cast<std::uint32_t>(l.out_dim()));
    w.u32(static_cast<std::uint32_t>(l.activation));
    w.tensor(l.weights);
    w.tensor(l.bias);
  }
  w.u8(opt != nullptr ? 1 : 0);
  if (opt != nullptr) {
    const auto& s = opt->settings();
    w.u32(static_cast<std::uint32_t>(s.kind));
    w.f64(s.learning_rate);
    w.f64(s.beta1);
    w.f64(s.beta2);
    w.f64(s.epsilon);
    w.u64(opt->steps());
    if (s.kind == OptimizerKind::adam) {
      for (const Gradients* g : {&opt->first_moment(), &opt->second_moment()}) {
        for (std::size_t l = 0; l < net.depth(); ++l) {
          w.tensor(g->weights.at(l));
          w.tensor(g->bias.at(l));
        }
      }
    }
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.need(sizeof kCheckpointMagic);
  if (std::memcmp(r.peek(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw ParseError("not a checkpoint: bad magic");
  r.skip(sizeof kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version) +
                                  " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t depth = r.u32();
  if (depth == 0) throw ParseError("checkpoint declares zero layers");
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < depth; ++i) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    const std::uint32_t act = r.u32();
    if (in == 0 || out == 0) throw ParseError("checkpoint layer with zero width");
    if (act > static_cast<std::uint32_t>(Activation::tanh))
      throw ParseError("checkpoint has unknown activation code " + std::to_string(act));
    DenseLayer l;
    l.activation = static_cast<Activation>(act);
    l.weights = r.tensor(out, in);
    l.bias = r.tensor(out, 1);
    layers.push_back(std::move(l));
  }
  Checkpoint cp;
  try {
    cp.net = Network(std::move(layers));
  } catch (const Error& e) {
    throw ParseError(std::string("checkpoint layers inconsistent: ") + e.what());
  }
  const std::uint8_t has_opt = r.u8();
  if (has_opt > 1) throw ParseError("checkpoint optimizer flag corrupt");
  if (has_opt == 1) {
    OptimizerSettings s;
    const std::uint32_t kind = r.u32();
    if (kind > 1) throw ParseError("checkpoint has unknown optimizer kind");
    s.kind = static_cast<OptimizerKind>(kind);
    s.learning_rate = r.f64();
    s.beta1 = r.f64();
    s.beta2 = r.f64();
    s.epsilon = r.f64();
    const std::uint64_t steps = r.u64();
    Gradients m;
    Gradients v;
    if (s.kind == OptimizerKind::adam) {
      for (Gradients* g : {&m, &v}) {
        for (const auto& l : cp.net.layers()) {
          g->weights.push_back(r.tensor(l.weights.rows(), l.weights.cols()));
          g->bias.push_back(r.tensor(l.bias.rows(), 1));
        }
      }
    }
    try {
      cp.optimizer.emplace(s, steps, std::move(m), std::move(v));
    } catch (const Error& e) {
      throw ParseError(std::string("checkpoint optimizer block invalid: ") + e.what());
    }
  }
  if (!r.at_end()) throw ParseError("checkpoint has trailing bytes");
  return cp;
}

}  // namespace detail

inline void save_checkpoint(const Network& net, const std::filesystem::path& path,
                            const Optimizer* opt = nullptr) {
  const auto bytes = detail::encode_checkpoint(net, opt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint_full(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return detail::decode_checkpoint(std::move(bytes));
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  return load_checkpoint_full(path).net;
}

}  // namespace sploss
