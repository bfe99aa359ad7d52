#pragma once

// Dual inference distillation. The teacher ranks, per layer, both the
// interacted items N(u) and the non-interacted corpus; the student is pushed
// to score the teacher's top choices highly, weighted by rank:
//   L = -(1 / n) sum_l sum_k w_k ln sigma(y_std^(l)(u, item ranked k by teacher))
// with w_k = lambda1 exp(-lambda2 k) and n = |N(u)| (interacted) or R.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bingear/binary_io.hpp"
#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/inference.hpp"
#include "bingear/parallel.hpp"
#include "bingear/propagation.hpp"

namespace bingear {

struct RankingWeightParams {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
};

// k is 1-based; w_1 is the largest weight.
inline double ranking_weight(std::size_t k, const RankingWeightParams& p) {
  require(k >= 1, "ranking_weight: rank is 1-based");
  return p.lambda1 * std::exp(-p.lambda2 * static_cast<double>(k));
}

inline constexpr double kLogitClamp = 40.0;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// -ln sigma(x) on the clamped logit.
inline double neg_log_sigmoid(double x) {
  x = std::clamp(x, -kLogitClamp, kLogitClamp);
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

// w_l^2 <v_u^(l), v_i^(l)> for each item.
inline std::vector<float> teacher_layer_scores(const LayerEmbeddings& teacher, Id num_users, Id user,
                                               std::span<const Id> items, const LayerWeights& w,
                                               std::size_t layer) {
  require(layer < teacher.layers.size(), "teacher_layer_scores: layer out of range");
  const float w2 = w.squared(layer);
  const auto uv = teacher.at(layer, user);
  std::vector<float> out(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    out[k] = w2 * dot(uv, teacher.at(layer, std::size_t{num_users} + items[k]));
  }
  return out;
}

// Items reordered by descending score; ties by ascending id.
inline IdList rank_by_score(std::span<const Id> items, std::span<const float> scores) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && items[a] < items[b]);
  });
  IdList out(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[k] = items[order[k]];
  return out;
}

// Per user, per layer: an ordered item list. Used for both the teacher's
// ranking of N(u) and the pseudo-positive sets S_tch^(l)(u).
struct LayeredItemLists {
  std::size_t segments = 0;  // L + 1
  std::vector<IdList> lists;  // index user * segments + layer

  const IdList& at(Id user, std::size_t layer) const { return lists[user * segments + layer]; }
  IdList& at(Id user, std::size_t layer) { return lists[user * segments + layer]; }
  Id num_users() const { return segments == 0 ? 0 : static_cast<Id>(lists.size() / segments); }

  bool operator==(const LayeredItemLists&) const = default;
};

struct PseudoPositiveSet {
  std::size_t R = 0;
  LayeredItemLists items;
  std::size_t truncated_users = 0;  // complement smaller than R

  bool operator==(const PseudoPositiveSet&) const = default;
};

// Teacher ranking of each user's interacted items, per layer.
inline LayeredItemLists rank_interacted(const LayerEmbeddings& teacher, const Dataset& ds,
                                        const LayerWeights& w) {
  LayeredItemLists out;
  out.segments = teacher.layers.size();
  out.lists.resize(std::size_t{ds.num_users} * out.segments);
  parallel_for(ds.num_users, [&](std::size_t u) {
    const Id user = static_cast<Id>(u);
    for (std::size_t l = 0; l < out.segments; ++l) {
      const auto scores = teacher_layer_scores(teacher, ds.num_users, user, ds.train[u], w, l);
      out.at(user, l) = rank_by_score(ds.train[u], scores);
    }
  });
  return out;
}

inline PseudoPositiveSet extract_pseudo_positives(const LayerEmbeddings& teacher, const Dataset& ds,
                                                  std::size_t R, const LayerWeights& w) {
  require(R >= 1, "extract_pseudo_positives: R must be >= 1");
  PseudoPositiveSet out;
  out.R = R;
  out.items.segments = teacher.layers.size();
  out.items.lists.resize(std::size_t{ds.num_users} * out.items.segments);
  std::vector<unsigned char> truncated(ds.num_users, 0);
  parallel_for(ds.num_users, [&](std::size_t u) {
    const Id user = static_cast<Id>(u);
    IdList complement;
    complement.reserve(ds.num_items - ds.train[u].size());
    for (Id i = 0; i < ds.num_items; ++i)
      if (!ds.interacted(user, i)) complement.push_back(i);
    truncated[u] = complement.size() < R;
    if (complement.empty()) return;
    for (std::size_t l = 0; l < out.items.segments; ++l) {
      const auto scores = teacher_layer_scores(teacher, ds.num_users, user, complement, w, l);
      const auto top = top_k(scores, R, {});
      IdList& dst = out.items.at(user, l);
      dst.reserve(top.items.size());
      for (Id k : top.items) dst.push_back(complement[k]);
    }
  });
  for (auto t : truncated) out.truncated_users += t;
  return out;
}

// Sidecar "BGPP", version 1: magic[4] u16 version, u32 M, u32 segments,
// u32 R, then per user per layer: u32 count, u32 item ids x count.
inline std::vector<char> encode_pseudo_positives(const PseudoPositiveSet& s) {
  io::Writer w;
  w.magic("BGPP");
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(s.items.num_users());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.items.segments));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.R));
  for (const auto& list : s.items.lists) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
    w.put_span<std::uint32_t>(list);
  }
  return w.bytes();
}

inline PseudoPositiveSet decode_pseudo_positives(io::Reader r) {
  r.expect_magic("BGPP");
  if (r.get<std::uint16_t>() != 1) fail(ErrorKind::format, r.name() + ": unsupported BGPP version");
  PseudoPositiveSet s;
  const auto users = r.get<std::uint32_t>();
  s.items.segments = r.get<std::uint32_t>();
  s.R = r.get<std::uint32_t>();
  s.items.lists.resize(std::size_t{users} * s.items.segments);
  for (auto& list : s.items.lists) {
    list.resize(r.get<std::uint32_t>());
    r.get_span<std::uint32_t>(list);
  }
  for (Id u = 0; u < users && s.items.segments > 0; ++u) {
    if (s.items.at(u, 0).size() < s.R) ++s.truncated_users;
  }
  r.expect_end();
  return s;
}

// ---------------------------------------------------------------------------

struct DistillTerm {
  double value = 0.0;
  bool flagged = false;  // empty input, contributes 0
};

// Core of both distillation losses: scores listed in teacher-rank order
// (k = 1, 2, ...). Adds -w_k ln sigma(y_k) / norm to the returned value and
// writes d/dy_k = -w_k (1 - sigma(y_k)) / norm into grad (same order).
template <typename Real>
double ranked_distill_loss(std::span<const Real> ranked_scores, double norm, const RankingWeightParams& p,
                           std::span<Real> grad) {
  double value = 0.0;
  double wk = p.lambda1 * std::exp(-p.lambda2);
  const double ratio = std::exp(-p.lambda2);
  for (std::size_t k = 0; k < ranked_scores.size(); ++k) {
    const double y = std::clamp(static_cast<double>(ranked_scores[k]), -kLogitClamp, kLogitClamp);
    value += wk * neg_log_sigmoid(y) / norm;
    if (!grad.empty()) grad[k] = static_cast<Real>(-wk * (1.0 - sigmoid(y)) / norm);
    wk *= ratio;
  }
  return value;
}

// Student and teacher layer scores over one user's interacted items, in any
// item order; the teacher scores fix the ranking.
struct LayerScoreSet {
  IdList items;
  std::vector<float> student;
  std::vector<float> teacher;
};

// grads (optional) receives d loss / d student score per layer, aligned with
// the input item order.
inline DistillTerm loss_id1(std::span<const LayerScoreSet> layers, const RankingWeightParams& p,
                            std::vector<std::vector<float>>* grads = nullptr) {
  DistillTerm out;
  if (grads) grads->assign(layers.size(), {});
  if (layers.empty() || layers.front().items.empty()) {
    out.flagged = true;
    return out;
  }
  const double norm = static_cast<double>(layers.front().items.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& s = layers[l];
    require(s.student.size() == s.items.size() && s.teacher.size() == s.items.size(),
            "loss_id1: score/item count mismatch");
    std::vector<std::size_t> order(s.items.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return s.teacher[a] > s.teacher[b] || (s.teacher[a] == s.teacher[b] && s.items[a] < s.items[b]);
    });
    std::vector<float> ranked(order.size()), g(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) ranked[k] = s.student[order[k]];
    out.value += ranked_distill_loss<float>(ranked, norm, p, g);
    if (grads) {
      auto& dst = (*grads)[l];
      dst.assign(order.size(), 0.0f);
      for (std::size_t k = 0; k < order.size(); ++k) dst[order[k]] = g[k];
    }
  }
  return out;
}

// ranked[l] holds student scores over S_tch^(l)(u) in the cached teacher order.
inline DistillTerm loss_id2(std::span<const std::vector<float>> ranked, const RankingWeightParams& p,
                            std::size_t R, std::vector<std::vector<float>>* grads = nullptr) {
  require(R >= 1, "loss_id2: R must be >= 1");
  DistillTerm out;
  if (grads) grads->assign(ranked.size(), {});
  bool any = false;
  for (std::size_t l = 0; l < ranked.size(); ++l) {
    std::vector<float> g(ranked[l].size());
    out.value += ranked_distill_loss<float>(ranked[l], static_cast<double>(R), p, g);
    any = any || !ranked[l].empty();
    if (grads) (*grads)[l] = std::move(g);
  }
  out.flagged = !any;
  return out;
}

}  // namespace bingear
