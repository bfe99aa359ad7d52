#pragma once

// Layer-wise 1-bit quantization. Every layer vector v is stored as a sign
// pattern q in {-1, +1}^d packed into 64-bit words (bit 1 <=> +1, pad bits 0)
// plus one scaler alpha = ||v||_1 / d, so alpha * q approximates v.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bingear/binary_io.hpp"
#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/parallel.hpp"
#include "bingear/propagation.hpp"

namespace bingear {

inline constexpr std::size_t words_for(std::size_t dim) { return (dim + 63) / 64; }

struct BitsView {
  std::span<const std::uint64_t> words;
  std::size_t dim = 0;
};

struct PackedBits {
  std::vector<std::uint64_t> words;
  std::size_t dim = 0;

  PackedBits() = default;
  explicit PackedBits(std::size_t d) : words(words_for(d), 0), dim(d) {}

  BitsView view() const { return {words, dim}; }
  operator BitsView() const { return view(); }

  bool bit(std::size_t j) const { return (words[j / 64] >> (j % 64)) & 1u; }
  void set(std::size_t j) { words[j / 64] |= std::uint64_t{1} << (j % 64); }

  // +1 / -1 per logical position.
  std::vector<int> unpack() const {
    std::vector<int> out(dim);
    for (std::size_t j = 0; j < dim; ++j) out[j] = bit(j) ? 1 : -1;
    return out;
  }

  static PackedBits pack(std::span<const int> pm1) {
    PackedBits p(pm1.size());
    for (std::size_t j = 0; j < pm1.size(); ++j)
      if (pm1[j] > 0) p.set(j);
    return p;
  }

  bool operator==(const PackedBits&) const = default;
};

// Writes sign bits of v into out (ceil(d / 64) words). sign(0) maps to +1.
inline void sign_quantize_into(std::span<const float> v, std::span<std::uint64_t> out) {
  std::fill(out.begin(), out.end(), 0);
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (std::isnan(v[j])) fail(ErrorKind::numeric, "sign_quantize: NaN entry at " + std::to_string(j));
    if (v[j] >= 0.0f) out[j / 64] |= std::uint64_t{1} << (j % 64);
  }
}

inline PackedBits sign_quantize(std::span<const float> v) {
  PackedBits p(v.size());
  sign_quantize_into(v, p.words);
  return p;
}

inline float embedding_scaler(std::span<const float> v) {
  if (v.empty()) return 0.0f;
  double sum = 0.0;
  for (float x : v) sum += std::fabs(static_cast<double>(x));
  return static_cast<float>(sum / static_cast<double>(v.size()));
}

// Per node x: scalers A_x = [alpha^(0) .. alpha^(L)] and sign rows
// Q_x = [q^(0) .. q^(L)], stored node-major in two flat arrays.
class BinarizedTable {
 public:
  BinarizedTable() = default;
  BinarizedTable(std::size_t nodes, std::size_t segments, std::size_t dim)
      : nodes_(nodes),
        segments_(segments),
        dim_(dim),
        words_per_row_(words_for(dim)),
        scalers_(nodes * segments, 0.0f),
        words_(nodes * segments * words_for(dim), 0) {}

  std::size_t nodes() const { return nodes_; }
  std::size_t segments() const { return segments_; }  // L + 1
  std::size_t dim() const { return dim_; }
  std::size_t words_per_row() const { return words_per_row_; }

  float scaler(std::size_t node, std::size_t layer) const {
    return scalers_[node * segments_ + layer];
  }
  float& scaler(std::size_t node, std::size_t layer) { return scalers_[node * segments_ + layer]; }

  BitsView bits(std::size_t node, std::size_t layer) const {
    return {std::span<const std::uint64_t>(words_).subspan(row_offset(node, layer), words_per_row_),
            dim_};
  }
  std::span<std::uint64_t> bits_mut(std::size_t node, std::size_t layer) {
    return std::span<std::uint64_t>(words_).subspan(row_offset(node, layer), words_per_row_);
  }

  // alpha * q as floats.
  void reconstruct(std::size_t node, std::size_t layer, std::span<float> out) const {
    const float a = scaler(node, layer);
    const auto b = bits(node, layer);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = ((b.words[j / 64] >> (j % 64)) & 1u) ? a : -a;
  }

  std::span<const float> raw_scalers() const { return scalers_; }
  std::span<float> raw_scalers() { return scalers_; }
  std::span<const std::uint64_t> raw_words() const { return words_; }
  std::span<std::uint64_t> raw_words() { return words_; }

  bool operator==(const BinarizedTable&) const = default;

 private:
  std::size_t row_offset(std::size_t node, std::size_t layer) const {
    return (node * segments_ + layer) * words_per_row_;
  }

  std::size_t nodes_ = 0;
  std::size_t segments_ = 0;
  std::size_t dim_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<float> scalers_;
  std::vector<std::uint64_t> words_;
};

inline BinarizedTable build_binarized_tables(const LayerEmbeddings& le) {
  BinarizedTable table(le.nodes(), le.layers.size(), le.dim());
  parallel_for(le.nodes(), [&](std::size_t x) {
    for (std::size_t l = 0; l < le.layers.size(); ++l) {
      const auto v = le.at(l, x);
      table.scaler(x, l) = embedding_scaler(v);
      sign_quantize_into(v, table.bits_mut(x, l));
    }
  });
  return table;
}

// ---------------------------------------------------------------------------
// Model file "BGER", version 1, little-endian:
//   magic[4] u16 version, u16 reserved(0), u64 config_hash, u64 seed,
//   u32 M, u32 N, u32 L, u32 d, f32 layer weights x (L + 1),
//   then per node: f32 scalers x (L + 1), u64 sign words x (L + 1) ceil(d / 64).

inline constexpr std::uint16_t kModelVersion = 1;

struct BinarizedModel {
  Id num_users = 0;
  Id num_items = 0;
  LayerWeights weights;
  BinarizedTable table;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  std::size_t num_layers() const { return table.segments() - 1; }
  std::size_t dim() const { return table.dim(); }
  Id item_node(Id item) const { return num_users + item; }

  bool operator==(const BinarizedModel& o) const {
    return num_users == o.num_users && num_items == o.num_items && weights.w == o.weights.w &&
           table == o.table && config_hash == o.config_hash && seed == o.seed;
  }
};

inline std::vector<char> encode_model(const BinarizedModel& m) {
  io::Writer w;
  w.magic("BGER");
  w.put<std::uint16_t>(kModelVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(m.config_hash);
  w.put<std::uint64_t>(m.seed);
  w.put<std::uint32_t>(m.num_users);
  w.put<std::uint32_t>(m.num_items);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.num_layers()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.dim()));
  w.put_span<float>(m.weights.w);
  const std::size_t seg = m.table.segments();
  const std::size_t row_words = seg * m.table.words_per_row();
  for (std::size_t x = 0; x < m.table.nodes(); ++x) {
    w.put_span<float>(m.table.raw_scalers().subspan(x * seg, seg));
    w.put_span<std::uint64_t>(m.table.raw_words().subspan(x * row_words, row_words));
  }
  return w.bytes();
}

inline BinarizedModel decode_model(io::Reader r) {
  r.expect_magic("BGER");
  const auto version = r.get<std::uint16_t>();
  if (version != kModelVersion) {
    fail(ErrorKind::format, r.name() + ": unsupported BGER version " + std::to_string(version));
  }
  r.get<std::uint16_t>();
  BinarizedModel m;
  m.config_hash = r.get<std::uint64_t>();
  m.seed = r.get<std::uint64_t>();
  m.num_users = r.get<std::uint32_t>();
  m.num_items = r.get<std::uint32_t>();
  const std::size_t layers = r.get<std::uint32_t>();
  const std::size_t dim = r.get<std::uint32_t>();
  if (dim == 0 || layers > 64) fail(ErrorKind::format, r.name() + ": implausible shape");
  m.weights.w.resize(layers + 1);
  r.get_span<float>(m.weights.w);
  m.table = BinarizedTable(std::size_t{m.num_users} + m.num_items, layers + 1, dim);
  const std::size_t seg = m.table.segments();
  const std::size_t row_words = seg * m.table.words_per_row();
  for (std::size_t x = 0; x < m.table.nodes(); ++x) {
    r.get_span<float>(m.table.raw_scalers().subspan(x * seg, seg));
    r.get_span<std::uint64_t>(m.table.raw_words().subspan(x * row_words, row_words));
  }
  r.expect_end();
  return m;
}

inline void save_model(const BinarizedModel& m, const std::string& path) {
  io::write_file(path, encode_model(m));
}

inline BinarizedModel load_model(const std::string& path) {
  return decode_model(io::Reader::from_file(path));
}

}  // namespace bingear
