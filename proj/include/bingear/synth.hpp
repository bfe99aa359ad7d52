#pragma once

// Pseudo-positive (hard negative) synthesis in embedding space:
//   1. draw J non-interacted items as the candidate pool,
//   2. mix positive signal into every candidate layer vector,
//        e'_j^(l) = beta o e_i^(l) + (1 - beta) o e_j^(l),  beta_x ~ U(0, c),
//   3. per layer keep the mixed vector with the largest <e'_j^(l), e_u^(l)>
//      and concatenate the winners layer-major.
// The same pipeline runs over full-precision layer vectors and over the
// alpha * q reconstructions of the binarized table.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/matrix.hpp"
#include "bingear/propagation.hpp"
#include "bingear/quantize.hpp"
#include "bingear/random.hpp"

namespace bingear {

struct SynthConfig {
  std::size_t J = 8;
  float c = 1.0f;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (J < 1) fail(ErrorKind::usage, "synth: J must be >= 1");
    if (!(c > 0.0f && c <= 1.0f)) fail(ErrorKind::usage, "synth: c must lie in (0, 1]");
  }
};

// The (L + 1) layer vectors of one node (or one synthesized sample).
template <typename Real>
struct BasicLayerStack {
  std::size_t layers = 0;  // L + 1
  std::size_t dim = 0;
  std::vector<Real> data;

  BasicLayerStack() = default;
  BasicLayerStack(std::size_t layer_count, std::size_t d)
      : layers(layer_count), dim(d), data(layer_count * d) {}

  std::span<Real> layer(std::size_t l) { return std::span<Real>(data).subspan(l * dim, dim); }
  std::span<const Real> layer(std::size_t l) const {
    return std::span<const Real>(data).subspan(l * dim, dim);
  }
};

using LayerStack = BasicLayerStack<float>;

template <typename Real>
BasicLayerStack<Real> gather(const BasicLayerEmbeddings<Real>& le, std::size_t node) {
  BasicLayerStack<Real> s(le.layers.size(), le.dim());
  for (std::size_t l = 0; l < s.layers; ++l) {
    const auto src = le.at(l, node);
    std::copy(src.begin(), src.end(), s.layer(l).begin());
  }
  return s;
}

inline LayerStack gather(const BinarizedTable& t, std::size_t node) {
  LayerStack s(t.segments(), t.dim());
  for (std::size_t l = 0; l < s.layers; ++l) t.reconstruct(node, l, s.layer(l));
  return s;
}

struct CandidateDraw {
  IdList items;
  bool flagged = false;  // fewer than J non-interacted items exist
};

// J items uniformly without replacement from I \ N(u).
inline CandidateDraw draw_candidates(Id user, const Dataset& ds, std::size_t J, StreamRng& rng) {
  const IdList& seen = ds.train[user];
  const std::size_t available = ds.num_items - seen.size();
  CandidateDraw out;
  if (available <= J) {
    out.flagged = available < J || available == 0;
    for (Id i = 0; i < ds.num_items; ++i)
      if (!std::binary_search(seen.begin(), seen.end(), i)) out.items.push_back(i);
    return out;
  }
  out.items.reserve(J);
  if (seen.size() * 2 <= ds.num_items) {
    // Rejection sampling; each accepted draw is uniform over what is left.
    std::uniform_int_distribution<Id> pick(0, ds.num_items - 1);
    while (out.items.size() < J) {
      const Id i = pick(rng);
      if (std::binary_search(seen.begin(), seen.end(), i)) continue;
      if (std::find(out.items.begin(), out.items.end(), i) != out.items.end()) continue;
      out.items.push_back(i);
    }
    return out;
  }
  IdList pool;
  pool.reserve(available);
  for (Id i = 0; i < ds.num_items; ++i)
    if (!std::binary_search(seen.begin(), seen.end(), i)) pool.push_back(i);
  for (std::size_t k = 0; k < J; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
    out.items.push_back(pool[k]);
  }
  return out;
}

template <typename Real>
BasicLayerStack<Real> mix_with_beta(const BasicLayerStack<Real>& positive, const BasicLayerStack<Real>& negative,
                                    const BasicLayerStack<Real>& beta) {
  require(positive.data.size() == negative.data.size() && beta.data.size() == negative.data.size(),
          "mix: layer shape mismatch");
  BasicLayerStack<Real> out(negative.layers, negative.dim);
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    out.data[k] = beta.data[k] * positive.data[k] + (Real(1) - beta.data[k]) * negative.data[k];
  }
  return out;
}

template <typename Real>
struct BasicMixedPool {
  std::vector<BasicLayerStack<Real>> mixed;  // one per pool element
  std::vector<BasicLayerStack<Real>> beta;   // the weights that produced it
};

using MixedPool = BasicMixedPool<float>;

// beta is redrawn for every pool element, layer and dimension. Draw order:
// element-major, then layer, then dimension.
template <typename Real>
BasicMixedPool<Real> mixup_candidates(const BasicLayerStack<Real>& positive,
                                      std::span<const BasicLayerStack<Real>> pool, float c, StreamRng& rng) {
  BasicMixedPool<Real> out;
  out.mixed.reserve(pool.size());
  out.beta.reserve(pool.size());
  for (const auto& neg : pool) {
    BasicLayerStack<Real> beta(neg.layers, neg.dim);
    for (Real& b : beta.data) b = static_cast<Real>(c * rng.uniform01());
    out.mixed.push_back(mix_with_beta(positive, neg, beta));
    out.beta.push_back(std::move(beta));
  }
  return out;
}

template <typename Real>
struct BasicSynthesizedNegative {
  BasicLayerStack<Real> vectors;    // e^(l),- per layer
  std::vector<std::size_t> source;  // winning pool index per layer
  IdList source_items;              // winning item id per layer (when known)
  BasicLayerStack<Real> beta;       // mix weights of the winners
  std::uint64_t digest = 0;

  // e^- as one (L + 1) d vector, layer-major like fuse_full.
  const std::vector<Real>& concatenated() const { return vectors.data; }
};

using SynthesizedNegative = BasicSynthesizedNegative<float>;

// Per-layer argmax of <e'^(l), e_u^(l)>; ties keep the earliest pool element.
template <typename Real>
BasicSynthesizedNegative<Real> synthesize_hard_negative(const BasicLayerStack<Real>& user,
                                                        std::span<const BasicLayerStack<Real>> mixed) {
  if (mixed.empty()) fail(ErrorKind::contract, "synthesize_hard_negative: empty pool");
  BasicSynthesizedNegative<Real> out;
  out.vectors = BasicLayerStack<Real>(user.layers, user.dim);
  out.source.resize(user.layers);
  for (std::size_t l = 0; l < user.layers; ++l) {
    std::size_t best = 0;
    Real best_score = dot<Real>(mixed[0].layer(l), user.layer(l));
    for (std::size_t j = 1; j < mixed.size(); ++j) {
      const Real s = dot<Real>(mixed[j].layer(l), user.layer(l));
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    out.source[l] = best;
    const auto src = mixed[best].layer(l);
    std::copy(src.begin(), src.end(), out.vectors.layer(l).begin());
  }
  return out;
}

// draw -> mix -> select for one (user, positive item) pair over one embedding
// space. Returns nullopt when the user has no non-interacted item.
template <typename Space>
auto synthesize(const Space& space, const Dataset& ds, Id user, Id item, const SynthConfig& cfg,
                StreamRng& rng) {
  using Stack = decltype(gather(space, std::size_t{0}));
  using Real = typename decltype(Stack::data)::value_type;
  std::optional<BasicSynthesizedNegative<Real>> result;
  const auto cand = draw_candidates(user, ds, cfg.J, rng);
  if (cand.items.empty()) return result;
  const Stack u = gather(space, user);
  const Stack pos = gather(space, ds.item_node(item));
  std::vector<Stack> pool;
  pool.reserve(cand.items.size());
  for (Id j : cand.items) pool.push_back(gather(space, ds.item_node(j)));
  auto mp = mixup_candidates<Real>(pos, pool, cfg.c, rng);
  auto neg = synthesize_hard_negative<Real>(u, mp.mixed);
  neg.source_items.resize(neg.source.size());
  neg.beta = Stack(u.layers, u.dim);
  std::uint64_t h = fnv1a64("synth");
  for (std::size_t l = 0; l < neg.source.size(); ++l) {
    neg.source_items[l] = cand.items[neg.source[l]];
    const auto b = mp.beta[neg.source[l]].layer(l);
    std::copy(b.begin(), b.end(), neg.beta.layer(l).begin());
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&neg.source_items[l]), sizeof(Id)), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(b.data()), b.size_bytes()), h);
  }
  neg.digest = h;
  result = std::move(neg);
  return result;
}

struct DualNegative {
  std::optional<SynthesizedNegative> full;       // over v^(l)
  std::optional<SynthesizedNegative> binarized;  // over alpha * q
};

// Position of one training pair; keys the random substreams.
struct PairKey {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::uint64_t pair = 0;
};

// Runs the synthesizer independently in both spaces. `student` is absent
// during teacher pre-training, and so is the binarized result.
inline DualNegative synthesize_dual(Id user, Id item, const Dataset& ds, const LayerEmbeddings& teacher,
                                    const BinarizedTable* student, const SynthConfig& cfg,
                                    const PairKey& key) {
  DualNegative out;
  StreamRng fp(cfg.rng_seed, "synth/full", {key.epoch, key.step, key.pair, user, item});
  out.full = synthesize(teacher, ds, user, item, cfg, fp);
  if (student) {
    StreamRng bin(cfg.rng_seed, "synth/binarized", {key.epoch, key.step, key.pair, user, item});
    out.binarized = synthesize(*student, ds, user, item, cfg, bin);
  }
  return out;
}

}  // namespace bingear
