#pragma once

// Matching scores in full precision (inner product of fused vectors) and in
// bitwise form:
//   score(u, i) = sum_l w_l^2 a_u^(l) a_i^(l) (2 popcount(XNOR(q_u, q_i)) - d)
// plus Top-K retrieval and operation accounting.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/matrix.hpp"
#include "bingear/parallel.hpp"
#include "bingear/propagation.hpp"
#include "bingear/quantize.hpp"

namespace bingear {

// Table-free bit count; must agree with the hardware path bit for bit.
inline constexpr int popcount64_portable(std::uint64_t x) noexcept {
  x = x - ((x >> 1) & 0x5555555555555555ULL);
  x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
  x = (x + (x >> 4)) & 0x0f0f0f0f0f0f0f0fULL;
  return static_cast<int>((x * 0x0101010101010101ULL) >> 56);
}

// std::popcount lowers to the POPCNT instruction when the target has it.
inline constexpr int popcount64(std::uint64_t x) noexcept { return std::popcount(x); }

// Inner product of the two +-1 vectors encoded by a and b. Pads are zero in
// both operands, so XNOR sets every pad position; those are subtracted
// before mapping the match count m onto 2m - d.
inline std::int64_t dot_pm1_bitwise(BitsView a, BitsView b) {
  if (a.dim != b.dim || a.words.size() != b.words.size() || a.words.size() != words_for(a.dim)) {
    fail(ErrorKind::contract, "dot_pm1_bitwise: dimension mismatch");
  }
  std::int64_t matches = 0;
  for (std::size_t k = 0; k < a.words.size(); ++k) matches += popcount64(~(a.words[k] ^ b.words[k]));
  const auto pad = static_cast<std::int64_t>(a.words.size() * 64 - a.dim);
  return 2 * (matches - pad) - static_cast<std::int64_t>(a.dim);
}

struct ScoreBreakdown {
  std::vector<float> segments;  // per-layer contributions
  float total = 0.0f;
};

inline void check_node(const BinarizedModel& model, Id user, Id item) {
  if (user >= model.num_users) fail(ErrorKind::lookup, "unknown user " + std::to_string(user));
  if (item >= model.num_items) fail(ErrorKind::lookup, "unknown item " + std::to_string(item));
}

inline ScoreBreakdown score_bitwise(const BinarizedModel& model, Id user, Id item) {
  check_node(model, user, item);
  const auto& t = model.table;
  const std::size_t xi = model.item_node(item);
  ScoreBreakdown out;
  out.segments.resize(t.segments());
  for (std::size_t l = 0; l < t.segments(); ++l) {
    const auto dot = static_cast<float>(dot_pm1_bitwise(t.bits(user, l), t.bits(xi, l)));
    out.segments[l] = model.weights.squared(l) * t.scaler(user, l) * t.scaler(xi, l) * dot;
    out.total += out.segments[l];
  }
  return out;
}

inline float score_full(std::span<const float> user_vec, std::span<const float> item_vec) {
  require(user_vec.size() == item_vec.size(), "score_full: length mismatch");
  return dot(user_vec, item_vec);
}

// Fused vectors f(A_x, Q_x) = ||_l w_l a_x^(l) q_x^(l) for one node.
inline std::vector<float> fuse_binarized(const BinarizedModel& model, std::size_t node) {
  const auto& t = model.table;
  std::vector<float> out(t.segments() * t.dim());
  for (std::size_t l = 0; l < t.segments(); ++l) {
    auto seg = std::span<float>(out).subspan(l * t.dim(), t.dim());
    t.reconstruct(node, l, seg);
    for (float& v : seg) v *= model.weights[l];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full-corpus scorers. score_all fills one score per item for a user.

class BitwiseScorer {
 public:
  explicit BitwiseScorer(const BinarizedModel& model) : model_(&model) {
    w2_.resize(model.table.segments());
    for (std::size_t l = 0; l < w2_.size(); ++l) w2_[l] = model.weights.squared(l);
  }

  Id num_items() const { return model_->num_items; }

  void score_all(Id user, std::span<float> out) const {
    const auto& t = model_->table;
    const std::size_t seg = t.segments();
    const std::size_t wpr = t.words_per_row();
    const auto pad = static_cast<std::int64_t>(wpr * 64 - t.dim());
    const auto d = static_cast<std::int64_t>(t.dim());
    const auto words = t.raw_words();
    const auto scalers = t.raw_scalers();
    const std::uint64_t* uw = words.data() + std::size_t{user} * seg * wpr;
    const float* us = scalers.data() + std::size_t{user} * seg;
    std::vector<float> uscale(seg);
    for (std::size_t l = 0; l < seg; ++l) uscale[l] = w2_[l] * us[l];
    for (Id i = 0; i < model_->num_items; ++i) {
      const std::size_t x = model_->item_node(i);
      const std::uint64_t* iw = words.data() + x * seg * wpr;
      const float* is = scalers.data() + x * seg;
      float total = 0.0f;
      for (std::size_t l = 0; l < seg; ++l) {
        std::int64_t matches = 0;
        for (std::size_t k = 0; k < wpr; ++k) {
          matches += popcount64(~(uw[l * wpr + k] ^ iw[l * wpr + k]));
        }
        total += uscale[l] * is[l] * static_cast<float>(2 * (matches - pad) - d);
      }
      out[i] = total;
    }
  }

 private:
  const BinarizedModel* model_;
  std::vector<float> w2_;
};

class FloatScorer {
 public:
  // One fused row per node, (M + N) x (L + 1) d.
  FloatScorer(Id num_users, Id num_items, Matrix fused)
      : num_users_(num_users), num_items_(num_items), fused_(std::move(fused)) {}

  static FloatScorer from_layers(const Dataset& ds, const LayerEmbeddings& le, const LayerWeights& w) {
    Matrix fused(le.nodes(), le.layers.size() * le.dim());
    parallel_for(le.nodes(), [&](std::size_t x) {
      const auto f = fuse_full(le, w, x);
      std::copy(f.begin(), f.end(), fused.row(x).begin());
    });
    return FloatScorer(ds.num_users, ds.num_items, std::move(fused));
  }

  // Float path over the alpha * q reconstructions.
  static FloatScorer from_model(const BinarizedModel& model) {
    const std::size_t nodes = model.table.nodes();
    Matrix fused(nodes, model.table.segments() * model.table.dim());
    parallel_for(nodes, [&](std::size_t x) {
      const auto f = fuse_binarized(model, x);
      std::copy(f.begin(), f.end(), fused.row(x).begin());
    });
    return FloatScorer(model.num_users, model.num_items, std::move(fused));
  }

  Id num_items() const { return num_items_; }
  const Matrix& fused() const { return fused_; }

  void score_all(Id user, std::span<float> out) const {
    const auto uv = fused_.row(user);
    for (Id i = 0; i < num_items_; ++i) out[i] = dot(uv, fused_.row(std::size_t{num_users_} + i));
  }

 private:
  Id num_users_;
  Id num_items_;
  Matrix fused_;
};

// ---------------------------------------------------------------------------

struct TopK {
  IdList items;
  bool truncated = false;  // fewer than K candidates were available
};

// K highest scores outside `exclude` (sorted ids); ties go to the smaller id.
inline TopK top_k(std::span<const float> scores, std::size_t k, std::span<const Id> exclude) {
  require(k >= 1, "top_k: K must be >= 1");
  IdList candidates;
  candidates.reserve(scores.size());
  std::size_t e = 0;
  for (Id i = 0; i < scores.size(); ++i) {
    while (e < exclude.size() && exclude[e] < i) ++e;
    if (e < exclude.size() && exclude[e] == i) continue;
    candidates.push_back(i);
  }
  auto better = [&](Id a, Id b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  TopK out;
  if (candidates.size() <= k) {
    out.truncated = candidates.size() < k;
    std::sort(candidates.begin(), candidates.end(), better);
    out.items = std::move(candidates);
    return out;
  }
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), better);
  candidates.resize(k);
  out.items = std::move(candidates);
  return out;
}

template <typename Scorer>
TopK top_k_for_user(const Scorer& scorer, Id user, std::size_t k, std::span<const Id> exclude) {
  std::vector<float> scores(scorer.num_items());
  scorer.score_all(user, scores);
  return top_k(scores, k, exclude);
}

// ---------------------------------------------------------------------------

struct OpCount {
  std::uint64_t flop = 0;
  std::uint64_t bop = 0;
};

// Per (user, item) pair and layer: one int-to-float scale, two multiplies by
// scalers and w_l^2, one accumulate (4 FLOPs); XNOR and popcount over d bits
// (2d BOPs).
inline OpCount count_ops(std::uint64_t users, std::uint64_t items, std::uint64_t layers,
                         std::uint64_t dim) {
  const std::uint64_t pairs = users * items * (layers + 1);
  return {4 * pairs, 2 * pairs * dim};
}

// Full-precision scoring over fused vectors of length (L + 1) d: one multiply
// and one add per entry.
inline OpCount count_ops_float(std::uint64_t users, std::uint64_t items, std::uint64_t layers,
                               std::uint64_t dim) {
  return {2 * users * items * (layers + 1) * dim, 0};
}

// Bytes of an encoded BGER model.
inline std::uint64_t model_file_bytes(std::uint64_t nodes, std::uint64_t layers, std::uint64_t dim) {
  const std::uint64_t header = 4 + 2 + 2 + 8 + 8 + 4 * 4 + 4 * (layers + 1);
  return header + nodes * (layers + 1) * (4 + 8 * words_for(dim));
}

// A full-precision table of one d-dimensional f32 embedding per node, the
// reference size the compression ratio is quoted against.
inline std::uint64_t full_precision_table_bytes(std::uint64_t nodes, std::uint64_t dim) {
  return 4 * nodes * dim;
}

}  // namespace bingear
