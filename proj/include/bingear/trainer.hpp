#pragma once

// Two-phase training. The teacher learns full-precision base embeddings with
// BPR against synthesized negatives. The student starts from the teacher's
// base, quantizes every propagated layer, and minimizes
//   L = L_BPR + L_ID1 + L_ID2 + lambda ||Theta||^2
// with d sign(x)/dx replaced by (2 gamma / sqrt(pi)) exp(-(gamma x)^2).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "json.hpp"

#include "bingear/binary_io.hpp"
#include "bingear/distill.hpp"
#include "bingear/error.hpp"
#include "bingear/eval.hpp"
#include "bingear/graph.hpp"
#include "bingear/inference.hpp"
#include "bingear/matrix.hpp"
#include "bingear/parallel.hpp"
#include "bingear/propagation.hpp"
#include "bingear/quantize.hpp"
#include "bingear/random.hpp"
#include "bingear/synth.hpp"

namespace bingear {

struct Ablation {
  bool disable_id1 = false;
  bool disable_id2 = false;
  bool disable_synth_teacher = false;  // SS-FP
  bool disable_synth_student = false;  // SS-B

  std::string label() const {
    std::vector<std::string> parts;
    if (disable_id1) parts.push_back("ID1");
    if (disable_id2) parts.push_back("ID2");
    if (disable_synth_teacher) parts.push_back("SS-FP");
    if (disable_synth_student) parts.push_back("SS-B");
    if (parts.empty()) return "full";
    std::string out = "w/o " + parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) out += ", " + parts[k];
    return out;
  }
};

struct TrainConfig {
  std::size_t dim = 256;
  std::size_t layers = 2;
  std::size_t batch_size = 2048;
  double lr = 1e-3;
  double reg = 1e-4;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  std::size_t J = 8;
  double c = 1.0;
  std::size_t R = 50;
  double gamma = 1.0;
  std::size_t epochs = 300;          // teacher
  std::size_t student_epochs = 300;
  std::size_t eval_every = 5;
  std::size_t patience = 5;  // evaluations without improvement
  double val_fraction = 0.05;
  std::uint64_t seed = 2024;
  double init_scale = 0.1;  // std = init_scale / sqrt(d)
  bool deterministic = true;
  Ablation ablation;

  void validate() const {
    auto bad = [](const std::string& what) { fail(ErrorKind::usage, "config: " + what); };
    if (dim < 1) bad("dim must be >= 1");
    if (layers < 1 || layers > 64) bad("layers must lie in [1, 64]");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (!(lr > 0)) bad("lr must be > 0");
    if (!(reg >= 0)) bad("reg must be >= 0");
    if (!(lambda1 > 0) || !(lambda2 >= 0)) bad("lambda1 must be > 0 and lambda2 >= 0");
    if (J < 1) bad("J must be >= 1");
    if (!(c > 0 && c <= 1)) bad("c must lie in (0, 1]");
    if (R < 1) bad("R must be >= 1");
    if (!(gamma > 0)) bad("gamma must be > 0");
    if (eval_every < 1) bad("eval_every must be >= 1");
    if (patience < 1) bad("patience must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) bad("val_fraction must lie in [0, 1)");
    if (!(init_scale > 0)) bad("init_scale must be > 0");
  }

  RankingWeightParams ranking() const { return {lambda1, lambda2}; }
  SynthConfig synth() const { return {J, static_cast<float>(c), seed}; }
};

// ---------------------------------------------------------------------------

struct BprTerm {
  double value = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
};

// -ln sigma(y_pos - y_neg) and its partials.
inline BprTerm bpr_pair_loss(double y_pos, double y_neg) {
  const double delta = std::clamp(y_pos - y_neg, -kLogitClamp, kLogitClamp);
  const double s = 1.0 - sigmoid(delta);
  return {neg_log_sigmoid(delta), -s, s};
}

// d/dphi erf(gamma phi).
inline double sign_grad(double phi, double gamma) {
  const double t = gamma * phi;
  return 2.0 * gamma / std::sqrt(std::numbers::pi) * std::exp(-t * t);
}

template <typename Real>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, double lr) : lr_(lr), m_(size, Real(0)), v_(size, Real(0)) {}

  void step(std::span<Real> params, std::span<const Real> grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), "adam: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    const Real step = static_cast<Real>(lr_ / c1);
    const Real inv_c2 = static_cast<Real>(1.0 / c2);
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = static_cast<Real>(kBeta1) * m_[k] + static_cast<Real>(1 - kBeta1) * grad[k];
      v_[k] = static_cast<Real>(kBeta2) * v_[k] + static_cast<Real>(1 - kBeta2) * grad[k] * grad[k];
      params[k] -= step * m_[k] / (std::sqrt(v_[k] * inv_c2) + static_cast<Real>(kEps));
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_ = 1e-3;
  std::uint64_t t_ = 0;
  std::vector<Real> m_;
  std::vector<Real> v_;
};

// ---------------------------------------------------------------------------
// Student forward/backward through b = alpha * q.

enum class Binarizer {
  sign,  // q = sign(v); training and inference
  erf,   // q = erf(gamma v); the smooth surrogate the gradient check runs on
  none,  // b = v; full-precision path
};

template <typename Real>
struct StudentForward {
  BasicLayerEmbeddings<Real> v;  // propagated layers
  BasicLayerEmbeddings<Real> b;  // what scores are computed from
  std::vector<Real> alpha;       // index layer * nodes + node
};

template <typename Real>
Real l1_scaler(std::span<const Real> v) {
  double sum = 0.0;
  for (Real x : v) sum += std::fabs(static_cast<double>(x));
  return static_cast<Real>(sum / static_cast<double>(v.size()));
}

template <typename Real>
StudentForward<Real> student_forward(const BasicMatrix<Real>& base, const NormalizedAdjacency& adj,
                                     std::size_t num_layers, Binarizer mode, double gamma) {
  StudentForward<Real> f;
  f.v = propagate(base, adj, num_layers);
  if (mode == Binarizer::none) {
    f.b = f.v;
    return f;
  }
  const std::size_t nodes = f.v.nodes();
  const std::size_t d = f.v.dim();
  f.alpha.resize(f.v.layers.size() * nodes);
  f.b.layers.assign(f.v.layers.size(), BasicMatrix<Real>(nodes, d));
  for (std::size_t l = 0; l < f.v.layers.size(); ++l) {
    parallel_for(nodes, [&](std::size_t x) {
      const auto v = f.v.at(l, x);
      const Real a = l1_scaler(v);
      f.alpha[l * nodes + x] = a;
      auto out = f.b.layers[l].row(x);
      for (std::size_t j = 0; j < d; ++j) {
        const Real q = mode == Binarizer::sign ? (v[j] >= Real(0) ? Real(1) : Real(-1))
                                               : static_cast<Real>(std::erf(gamma * static_cast<double>(v[j])));
        out[j] = a * q;
      }
    });
  }
  return f;
}

// dL/dv from dL/db, per layer:
//   dL/dv_j = sgn(v_j) / d <g, q> + alpha sign_grad(v_j, gamma) g_j
template <typename Real>
std::vector<BasicMatrix<Real>> binarize_backward(const StudentForward<Real>& f,
                                                 const std::vector<BasicMatrix<Real>>& grad_b, Binarizer mode,
                                                 double gamma) {
  if (mode == Binarizer::none) return grad_b;
  const std::size_t nodes = f.v.nodes();
  const std::size_t d = f.v.dim();
  std::vector<BasicMatrix<Real>> out(grad_b.size(), BasicMatrix<Real>(nodes, d));
  for (std::size_t l = 0; l < grad_b.size(); ++l) {
    parallel_for(nodes, [&](std::size_t x) {
      const auto g = grad_b[l].row(x);
      if (std::all_of(g.begin(), g.end(), [](Real t) { return t == Real(0); })) return;
      const auto v = f.v.at(l, x);
      const double a = f.alpha[l * nodes + x];
      double gq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double q = mode == Binarizer::sign ? (v[j] >= Real(0) ? 1.0 : -1.0)
                                                 : std::erf(gamma * static_cast<double>(v[j]));
        gq += static_cast<double>(g[j]) * q;
      }
      auto dst = out[l].row(x);
      for (std::size_t j = 0; j < d; ++j) {
        const double sv = v[j] > Real(0) ? 1.0 : (v[j] < Real(0) ? -1.0 : 0.0);
        dst[j] = static_cast<Real>(sv / static_cast<double>(d) * gq +
                                   a * sign_grad(static_cast<double>(v[j]), gamma) * static_cast<double>(g[j]));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

// Frozen teacher products consumed by the student phase.
struct TeacherCache {
  LayeredItemLists interacted;  // N(u) in teacher order, per layer
  PseudoPositiveSet pseudo;     // S_tch^(l)(u)
};

inline TeacherCache build_teacher_cache(const LayerEmbeddings& teacher, const Dataset& ds, std::size_t R,
                                        const LayerWeights& w) {
  return {rank_interacted(teacher, ds, w), extract_pseudo_positives(teacher, ds, R, w)};
}

struct ObjectiveTerms {
  double bpr = 0.0;
  double id1 = 0.0;
  double id2 = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::size_t flagged = 0;  // pairs or users that contributed nothing

  ObjectiveTerms& operator+=(const ObjectiveTerms& o) {
    bpr += o.bpr;
    id1 += o.id1;
    id2 += o.id2;
    reg += o.reg;
    total += o.total;
    flagged += o.flagged;
    return *this;
  }
};

struct ObjectiveOptions {
  Binarizer binarizer = Binarizer::sign;
  double gamma = 1.0;
  double reg = 1e-4;
  RankingWeightParams ranking;
  SynthConfig synth;
  bool synthesize = true;  // false: one uniform negative per pair
  bool include_bpr = true;
  bool include_id1 = true;
  bool include_id2 = true;
  std::string stream = "synth/binarized";
  unsigned workers = 1;
};

struct StepKey {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
};

namespace detail {

template <typename Real>
void add_scaled(std::span<Real> dst, double s, std::span<const Real> src) {
  const Real k = static_cast<Real>(s);
  for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += k * src[j];
}

}  // namespace detail

// Objective over one batch of (user, positive item) pairs.
//   BPR: mean over pairs of -ln sigma(y_pos - y_neg).
//   ID1 / ID2: mean over the batch's distinct users.
//   reg: (lambda / B) sum ||theta_x||^2 over the base rows the pairs touch
//        (users, positives and the items their negatives were built from).
// Scores are sum_l w_l^2 <b_u^(l), b_x^(l)>. When grad is given it receives
// dL/dbase.
template <typename Real>
ObjectiveTerms objective(const BasicMatrix<Real>& base, const NormalizedAdjacency& adj, const Dataset& ds,
                         std::size_t num_layers, const LayerWeights& w, const TeacherCache* cache,
                         std::span<const Edge> batch, const ObjectiveOptions& opt, StepKey key,
                         BasicMatrix<Real>* grad) {
  require(base.rows() == ds.num_nodes(), "objective: base rows != node count");
  require(w.size() == num_layers + 1, "objective: weight count != L + 1");
  const bool want_id = opt.include_id1 || opt.include_id2;
  if (want_id) require(cache != nullptr, "objective: distillation terms need the teacher cache");
  const auto f = student_forward(base, adj, num_layers, opt.binarizer, opt.gamma);
  const std::size_t seg = num_layers + 1;
  const std::size_t nodes = ds.num_nodes();
  const std::size_t d = base.cols();
  const double inv_pairs = batch.empty() ? 0.0 : 1.0 / static_cast<double>(batch.size());

  IdList users;
  users.reserve(batch.size());
  for (const auto& e : batch) users.push_back(e.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  const double inv_users = users.empty() ? 0.0 : 1.0 / static_cast<double>(users.size());

  auto b_row = [&](std::size_t l, std::size_t x) { return f.b.at(l, x); };

  struct Chunk {
    ObjectiveTerms terms;
    std::vector<BasicMatrix<Real>> gb;
    std::vector<std::size_t> touched;
  };
  const unsigned workers = std::max(1u, opt.workers);
  std::vector<Chunk> chunks(workers);
  auto init_chunk = [&](Chunk& c) {
    if (grad && c.gb.empty()) c.gb.assign(seg, BasicMatrix<Real>(nodes, d));
  };

  if (opt.include_bpr) {
    parallel_chunks(
        batch.size(),
        [&](std::size_t chunk, std::size_t begin, std::size_t end) {
          Chunk& c = chunks[chunk];
          init_chunk(c);
          for (std::size_t p = begin; p < end; ++p) {
            const Id u = batch[p].user;
            const Id i = batch[p].item;
            const std::size_t xi = ds.item_node(i);
            StreamRng rng(opt.synth.rng_seed, opt.stream, {key.epoch, key.step, p, u, i});
            std::optional<BasicSynthesizedNegative<Real>> neg;
            Id uniform_neg = 0;
            if (opt.synthesize) {
              neg = synthesize(f.b, ds, u, i, opt.synth, rng);
              if (!neg) {
                ++c.terms.flagged;
                continue;
              }
            } else {
              const auto cand = draw_candidates(u, ds, 1, rng);
              if (cand.items.empty()) {
                ++c.terms.flagged;
                continue;
              }
              uniform_neg = cand.items[0];
            }
            double y_pos = 0.0, y_neg = 0.0;
            for (std::size_t l = 0; l < seg; ++l) {
              const double w2 = w.squared(l);
              y_pos += w2 * static_cast<double>(dot<Real>(b_row(l, u), b_row(l, xi)));
              const std::span<const Real> nv = neg ? std::as_const(neg->vectors).layer(l) : b_row(l, ds.item_node(uniform_neg));
              y_neg += w2 * static_cast<double>(dot<Real>(b_row(l, u), nv));
            }
            const BprTerm t = bpr_pair_loss(y_pos, y_neg);
            c.terms.bpr += t.value * inv_pairs;
            c.touched.push_back(u);
            c.touched.push_back(xi);
            if (neg) {
              for (Id j : neg->source_items) c.touched.push_back(ds.item_node(j));
            } else {
              c.touched.push_back(ds.item_node(uniform_neg));
            }
            if (!grad) continue;
            const double dp = t.d_pos * inv_pairs;
            const double dn = t.d_neg * inv_pairs;
            for (std::size_t l = 0; l < seg; ++l) {
              const double w2 = w.squared(l);
              auto& G = c.gb[l];
              const auto bu = b_row(l, u);
              detail::add_scaled<Real>(G.row(u), dp * w2, b_row(l, xi));
              detail::add_scaled<Real>(G.row(xi), dp * w2, bu);
              if (neg) {
                detail::add_scaled<Real>(G.row(u), dn * w2, neg->vectors.layer(l));
                // e^- = beta o b_i + (1 - beta) o b_j
                const auto beta = neg->beta.layer(l);
                auto gi = G.row(xi);
                auto gj = G.row(ds.item_node(neg->source_items[l]));
                for (std::size_t k = 0; k < d; ++k) {
                  const Real s = static_cast<Real>(dn * w2) * bu[k];
                  gi[k] += beta[k] * s;
                  gj[k] += (Real(1) - beta[k]) * s;
                }
              } else {
                const std::size_t xj = ds.item_node(uniform_neg);
                detail::add_scaled<Real>(G.row(u), dn * w2, b_row(l, xj));
                detail::add_scaled<Real>(G.row(xj), dn * w2, bu);
              }
            }
          }
        },
        workers);
  }

  if (want_id && !users.empty()) {
    const double R = static_cast<double>(cache->pseudo.R);
    parallel_chunks(
        users.size(),
        [&](std::size_t chunk, std::size_t begin, std::size_t end) {
          Chunk& c = chunks[chunk];
          init_chunk(c);
          std::vector<Real> scores, g;
          auto term = [&](Id u, std::size_t l, const IdList& items, double norm, double& acc) {
            if (items.empty()) {
              ++c.terms.flagged;
              return;
            }
            const double w2 = w.squared(l);
            const auto bu = b_row(l, u);
            scores.resize(items.size());
            g.resize(items.size());
            for (std::size_t k = 0; k < items.size(); ++k) {
              scores[k] = static_cast<Real>(w2 * static_cast<double>(dot<Real>(bu, b_row(l, ds.item_node(items[k])))));
            }
            acc += ranked_distill_loss<Real>(scores, norm, opt.ranking, grad ? std::span<Real>(g) : std::span<Real>()) *
                   inv_users;
            if (!grad) return;
            auto& G = c.gb[l];
            for (std::size_t k = 0; k < items.size(); ++k) {
              const double s = static_cast<double>(g[k]) * inv_users * w2;
              const std::size_t xi = ds.item_node(items[k]);
              detail::add_scaled<Real>(G.row(u), s, b_row(l, xi));
              detail::add_scaled<Real>(G.row(xi), s, bu);
            }
          };
          for (std::size_t k = begin; k < end; ++k) {
            const Id u = users[k];
            for (std::size_t l = 0; l < seg; ++l) {
              if (opt.include_id1) term(u, l, cache->interacted.at(u, l), static_cast<double>(ds.train[u].size()), c.terms.id1);
              if (opt.include_id2) term(u, l, cache->pseudo.items.at(u, l), R, c.terms.id2);
            }
          }
        },
        workers);
  }

  ObjectiveTerms terms;
  std::vector<std::size_t> touched;
  std::vector<BasicMatrix<Real>> gb;
  for (auto& c : chunks) {
    terms += c.terms;
    touched.insert(touched.end(), c.touched.begin(), c.touched.end());
    if (c.gb.empty()) continue;
    if (gb.empty()) {
      gb = std::move(c.gb);
      continue;
    }
    for (std::size_t l = 0; l < seg; ++l) {
      auto dst = gb[l].flat();
      auto src = c.gb[l].flat();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

  const double reg_scale = opt.reg * inv_pairs;
  for (std::size_t x : touched) {
    double sq = 0.0;
    for (Real t : base.row(x)) sq += static_cast<double>(t) * static_cast<double>(t);
    terms.reg += reg_scale * sq;
  }
  terms.total = terms.bpr + terms.id1 + terms.id2 + terms.reg;

  if (grad) {
    if (gb.empty()) gb.assign(seg, BasicMatrix<Real>(nodes, d));
    *grad = backpropagate(binarize_backward(f, gb, opt.binarizer, opt.gamma), adj);
    for (std::size_t x : touched) detail::add_scaled<Real>(grad->row(x), 2.0 * reg_scale, base.row(x));
  }
  return terms;
}

// ---------------------------------------------------------------------------
// Training loops.

// The dataset the optimizer sees: `train.train` is the original train set
// minus a validation slice, which sits in `train.test`.
struct TrainingSplit {
  Dataset train;
  NormalizedAdjacency adj;
};

// Holds out about `fraction` of each user's train edges (never the last one)
// for early stopping. Deterministic given the seed.
inline TrainingSplit make_training_split(const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<IdList> keep(ds.num_users), held(ds.num_users);
  for (Id u = 0; u < ds.num_users; ++u) {
    StreamRng rng(seed, "validation", {u});
    for (Id i : ds.train[u]) {
      if (rng.uniform01() < fraction) {
        held[u].push_back(i);
      } else {
        keep[u].push_back(i);
      }
    }
    if (keep[u].empty() && !held[u].empty()) {
      keep[u].push_back(held[u].back());
      held[u].pop_back();
      std::sort(keep[u].begin(), keep[u].end());
    }
  }
  TrainingSplit s;
  s.train = Dataset::from_lists(ds.num_users, ds.num_items, std::move(keep), std::move(held));
  if (s.train.train_count() == 0) fail(ErrorKind::data, "training split has no train edges");
  s.adj = build_normalized_adjacency(s.train);
  return s;
}

inline Matrix init_base(std::size_t nodes, std::size_t dim, double scale, std::uint64_t seed) {
  Matrix base(nodes, dim);
  StreamRng rng(seed, "init", {});
  std::normal_distribution<float> normal(0.0f, static_cast<float>(scale / std::sqrt(static_cast<double>(dim))));
  for (float& v : base.flat()) v = normal(rng);
  return base;
}

struct MetricsRecord {
  std::string phase;    // teacher | student
  std::string variant;  // ablation label
  std::size_t epoch = 0;
  ObjectiveTerms terms;  // epoch mean over batches
  bool evaluated = false;
  double recall20 = 0.0;
  double ndcg20 = 0.0;
  double wall_s = 0.0;
};

inline std::string metrics_json(const MetricsRecord& r, std::uint64_t config_hash, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["variant"] = r.variant;
  j["epoch"] = r.epoch;
  j["bpr"] = r.terms.bpr;
  j["id1"] = r.terms.id1;
  j["id2"] = r.terms.id2;
  j["reg"] = r.terms.reg;
  j["total"] = r.terms.total;
  if (r.evaluated) {
    j["recall@20"] = r.recall20;
    j["ndcg@20"] = r.ndcg20;
  }
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["wall_s"] = r.wall_s;
  return j.dump();
}

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  // Receives the best base table seen so far right before a divergence abort.
  std::function<void(const Matrix&)> on_divergence;
};

struct PhaseResult {
  Matrix base;  // best-validation base table
  std::vector<MetricsRecord> log;
  std::size_t best_epoch = 0;
  double best_recall = -1.0;
};

namespace detail {

inline void check_terms(const ObjectiveTerms& t, std::size_t epoch, std::size_t step) {
  const std::pair<const char*, double> named[] = {{"bpr", t.bpr}, {"id1", t.id1}, {"id2", t.id2}, {"reg", t.reg}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step) + ": non-finite " + name + " term");
    }
  }
}

// Evaluation closure returns (Recall@20, NDCG@20) on the validation slice.
template <typename Eval>
PhaseResult run_phase(const TrainingSplit& split, Matrix base, const TrainConfig& cfg, const ObjectiveOptions& opt,
                      const TeacherCache* cache, std::size_t epochs, const std::string& phase, Eval&& eval,
                      const TrainHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  const auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  const LayerWeights w = layer_weights(cfg.layers);
  const bool has_val = split.train.test_count() > 0;
  Adam<float> adam(base.flat().size(), cfg.lr);
  PhaseResult res;
  res.base = base;
  auto record = [&](MetricsRecord r) {
    r.phase = phase;
    r.variant = cfg.ablation.label();
    r.wall_s = wall();
    if (hooks.on_record) hooks.on_record(r);
    res.log.push_back(std::move(r));
  };
  std::size_t stale = 0;
  auto consider = [&](MetricsRecord& r, std::size_t epoch) {
    if (!has_val) {
      res.base = base;
      res.best_epoch = epoch;
      return false;
    }
    const auto [recall, ndcg] = eval(base);
    r.evaluated = true;
    r.recall20 = recall;
    r.ndcg20 = ndcg;
    if (recall > res.best_recall) {
      res.best_recall = recall;
      res.best_epoch = epoch;
      res.base = base;
      stale = 0;
      return false;
    }
    return ++stale >= cfg.patience;
  };

  {
    MetricsRecord r;
    r.epoch = 0;
    consider(r, 0);
    record(r);
  }
  std::vector<Edge> edges = split.train.train_edges();
  Matrix grad;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    StreamRng shuffle_rng(cfg.seed, "shuffle/" + phase, {epoch});
    std::vector<Edge> order = edges;
    for (std::size_t k = order.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(order[k - 1], order[pick(shuffle_rng)]);
    }
    MetricsRecord r;
    r.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++steps) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const auto batch = std::span<const Edge>(order).subspan(begin, end - begin);
      ObjectiveTerms t;
      try {
        t = objective<float>(base, split.adj, split.train, cfg.layers, w, cache, batch, opt, {epoch, steps}, &grad);
        check_terms(t, epoch, steps);
        if (!grad.all_finite()) {
          fail(ErrorKind::numeric, "training diverged at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(steps) + ": non-finite gradient");
        }
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::numeric && hooks.on_divergence) hooks.on_divergence(res.base);
        throw;
      }
      adam.step(base.flat(), grad.flat());
      r.terms += t;
    }
    if (steps > 0) {
      const double s = 1.0 / static_cast<double>(steps);
      r.terms.bpr *= s;
      r.terms.id1 *= s;
      r.terms.id2 *= s;
      r.terms.reg *= s;
      r.terms.total *= s;
    }
    bool stop = false;
    if (epoch % cfg.eval_every == 0 || epoch == epochs) stop = consider(r, epoch);
    record(r);
    if (stop) break;
  }
  return res;
}

}  // namespace detail

inline ObjectiveOptions teacher_options(const TrainConfig& cfg) {
  ObjectiveOptions o;
  o.binarizer = Binarizer::none;
  o.gamma = cfg.gamma;
  o.reg = cfg.reg;
  o.ranking = cfg.ranking();
  o.synth = cfg.synth();
  o.synthesize = !cfg.ablation.disable_synth_teacher;
  o.include_id1 = false;
  o.include_id2 = false;
  o.stream = "synth/full";
  o.workers = cfg.deterministic ? 1 : thread_count();
  return o;
}

inline ObjectiveOptions student_options(const TrainConfig& cfg) {
  ObjectiveOptions o = teacher_options(cfg);
  o.binarizer = Binarizer::sign;
  o.synthesize = !cfg.ablation.disable_synth_student;
  o.include_id1 = !cfg.ablation.disable_id1;
  o.include_id2 = !cfg.ablation.disable_id2;
  o.stream = "synth/binarized";
  return o;
}

inline LayerEmbeddings teacher_layers(const TrainingSplit& split, const Matrix& base, const TrainConfig& cfg) {
  return propagate(base, split.adj, cfg.layers);
}

inline BinarizedModel make_student_model(const TrainingSplit& split, const Matrix& base, const TrainConfig& cfg,
                                         std::uint64_t config_hash) {
  BinarizedModel m;
  m.num_users = split.train.num_users;
  m.num_items = split.train.num_items;
  m.weights = layer_weights(cfg.layers);
  m.table = build_binarized_tables(propagate(base, split.adj, cfg.layers));
  m.config_hash = config_hash;
  m.seed = cfg.seed;
  return m;
}

namespace detail {

inline std::pair<double, double> at20(const MetricReport& rep) { return {rep.recall[0], rep.ndcg[0]}; }

inline const std::vector<std::size_t> kValidationK{20};

}  // namespace detail

inline PhaseResult train_teacher(const TrainingSplit& split, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const LayerWeights w = layer_weights(cfg.layers);
  auto eval = [&](const Matrix& base) {
    const auto scorer = FloatScorer::from_layers(split.train, teacher_layers(split, base, cfg), w);
    return detail::at20(evaluate(scorer, split.train.train, split.train.test, detail::kValidationK));
  };
  Matrix base = init_base(split.train.num_nodes(), cfg.dim, cfg.init_scale, cfg.seed);
  return detail::run_phase(split, std::move(base), cfg, teacher_options(cfg), nullptr, cfg.epochs, "teacher", eval,
                           hooks);
}

inline PhaseResult train_student(const TrainingSplit& split, const Matrix& teacher_base, const TrainConfig& cfg,
                                 const TrainHooks& hooks = {}) {
  cfg.validate();
  require(teacher_base.rows() == split.train.num_nodes() && teacher_base.cols() == cfg.dim,
          "train_student: teacher table shape does not match the config");
  const LayerWeights w = layer_weights(cfg.layers);
  const TeacherCache cache = build_teacher_cache(teacher_layers(split, teacher_base, cfg), split.train, cfg.R, w);
  auto eval = [&](const Matrix& base) {
    const auto model = make_student_model(split, base, cfg, 0);
    const BitwiseScorer scorer(model);
    return detail::at20(evaluate(scorer, split.train.train, split.train.test, detail::kValidationK));
  };
  return detail::run_phase(split, teacher_base, cfg, student_options(cfg), &cache, cfg.student_epochs, "student",
                           eval, hooks);
}

// ---------------------------------------------------------------------------
// Teacher checkpoint "BGTC", version 1, little-endian:
//   magic[4] u16 version, u16 reserved(0), u64 config_hash, u64 seed,
//   u32 M, u32 N, u32 L, u32 d, then the f32 base table, (M + N) x d row-major.

struct TeacherCheckpoint {
  Id num_users = 0;
  Id num_items = 0;
  std::size_t layers = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  Matrix base;

  bool operator==(const TeacherCheckpoint&) const = default;
};

inline std::vector<char> encode_teacher(const TeacherCheckpoint& c) {
  io::Writer w;
  w.magic("BGTC");
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(c.config_hash);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint32_t>(c.num_users);
  w.put<std::uint32_t>(c.num_items);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.layers));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.base.cols()));
  w.put_span<float>(c.base.flat());
  return w.bytes();
}

inline TeacherCheckpoint decode_teacher(io::Reader r) {
  r.expect_magic("BGTC");
  if (r.get<std::uint16_t>() != 1) fail(ErrorKind::format, r.name() + ": unsupported BGTC version");
  r.get<std::uint16_t>();
  TeacherCheckpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.seed = r.get<std::uint64_t>();
  c.num_users = r.get<std::uint32_t>();
  c.num_items = r.get<std::uint32_t>();
  c.layers = r.get<std::uint32_t>();
  const std::size_t dim = r.get<std::uint32_t>();
  if (dim == 0) fail(ErrorKind::format, r.name() + ": zero dimension");
  c.base = Matrix(std::size_t{c.num_users} + c.num_items, dim);
  r.get_span<float>(c.base.flat());
  r.expect_end();
  return c;
}

inline void save_teacher(const TeacherCheckpoint& c, const std::string& path) {
  io::write_file(path, encode_teacher(c));
}

inline TeacherCheckpoint load_teacher(const std::string& path) {
  return decode_teacher(io::Reader::from_file(path));
}

}  // namespace bingear
