#pragma once

// Ranking metrics over held-out items and the feature-enrichment ratio: the
// L1 norm of d v_u^(l) / d v_x^(0), both by walk enumeration and by a dense
// matrix power.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/inference.hpp"
#include "bingear/parallel.hpp"

namespace bingear {

inline const std::vector<std::size_t> kDefaultKs{20, 40, 60, 80, 100};

// relevant must be sorted.
inline double recall_at_k(std::span<const Id> ranked, std::span<const Id> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  const std::size_t n = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary relevance, gain 1 / log2(rank + 1) with 1-based ranks.
inline double ndcg_at_k(std::span<const Id> ranked, std::span<const Id> relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  const std::size_t n = std::min(k, ranked.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(relevant.begin(), relevant.end(), ranked[r])) dcg += 1.0 / std::log2(r + 2.0);
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, relevant.size()); ++r) ideal += 1.0 / std::log2(r + 2.0);
  return dcg / ideal;
}

struct MetricReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::size_t users = 0;    // evaluated
  std::size_t skipped = 0;  // empty relevant list

  double recall_at(std::size_t k) const {
    for (std::size_t j = 0; j < ks.size(); ++j)
      if (ks[j] == k) return recall[j];
    fail(ErrorKind::lookup, "metric report has no K=" + std::to_string(k));
  }
  double ndcg_at(std::size_t k) const {
    for (std::size_t j = 0; j < ks.size(); ++j)
      if (ks[j] == k) return ndcg[j];
    fail(ErrorKind::lookup, "metric report has no K=" + std::to_string(k));
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "k,recall,ndcg,users\n" << std::setprecision(8);
    for (std::size_t j = 0; j < ks.size(); ++j)
      os << ks[j] << ',' << recall[j] << ',' << ndcg[j] << ',' << users << '\n';
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(8) << "K" << std::setw(12) << "Recall" << std::setw(12) << "NDCG" << '\n';
    os << std::fixed << std::setprecision(4);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      os << std::left << std::setw(8) << ks[j] << std::setw(12) << recall[j] << std::setw(12) << ndcg[j]
         << '\n';
    }
    os << "users evaluated " << users << ", skipped " << skipped << '\n';
    return os.str();
  }
};

// Top-max(K) per user over all items minus `exclude[u]`, scored against
// `relevant[u]`. Users with nothing relevant are skipped and counted.
template <typename Scorer>
MetricReport evaluate(const Scorer& scorer, const std::vector<IdList>& exclude,
                      const std::vector<IdList>& relevant, std::span<const std::size_t> ks) {
  if (ks.empty()) fail(ErrorKind::usage, "evaluate: empty K list");
  for (std::size_t k : ks)
    if (k == 0) fail(ErrorKind::usage, "evaluate: K must be >= 1");
  require(exclude.size() == relevant.size(), "evaluate: exclude/relevant user count mismatch");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  const std::size_t users = relevant.size();
  const unsigned workers = thread_count();
  struct Partial {
    std::vector<double> recall, ndcg;
    std::size_t users = 0;
  };
  std::vector<Partial> parts(workers);
  parallel_chunks(
      users,
      [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        Partial& p = parts[chunk];
        p.recall.assign(ks.size(), 0.0);
        p.ndcg.assign(ks.size(), 0.0);
        std::vector<float> scores(scorer.num_items());
        for (std::size_t u = begin; u < end; ++u) {
          if (relevant[u].empty()) continue;
          scorer.score_all(static_cast<Id>(u), scores);
          const auto top = top_k(scores, kmax, exclude[u]);
          for (std::size_t j = 0; j < ks.size(); ++j) {
            p.recall[j] += recall_at_k(top.items, relevant[u], ks[j]);
            p.ndcg[j] += ndcg_at_k(top.items, relevant[u], ks[j]);
          }
          ++p.users;
        }
      },
      workers);
  MetricReport rep;
  rep.ks.assign(ks.begin(), ks.end());
  rep.recall.assign(ks.size(), 0.0);
  rep.ndcg.assign(ks.size(), 0.0);
  for (const auto& p : parts) {
    if (p.recall.empty()) continue;
    for (std::size_t j = 0; j < ks.size(); ++j) {
      rep.recall[j] += p.recall[j];
      rep.ndcg[j] += p.ndcg[j];
    }
    rep.users += p.users;
  }
  for (std::size_t j = 0; j < ks.size() && rep.users > 0; ++j) {
    rep.recall[j] /= static_cast<double>(rep.users);
    rep.ndcg[j] /= static_cast<double>(rep.users);
  }
  rep.skipped = users - rep.users;
  return rep;
}

// ---------------------------------------------------------------------------
// Feature enrichment. Nodes use the combined numbering (users, then items).

inline constexpr std::size_t kMaxEnrichmentLayers = 4;
inline constexpr std::size_t kMaxOracleNodes = 200;

namespace detail {

inline std::vector<IdList> node_neighbors(const Dataset& ds) {
  std::vector<IdList> nb(ds.num_nodes());
  for (Id u = 0; u < ds.num_users; ++u)
    for (Id i : ds.train[u]) nb[u].push_back(ds.item_node(i));
  for (Id i = 0; i < ds.num_items; ++i)
    for (Id u : ds.item_users[i]) nb[ds.item_node(i)].push_back(u);
  return nb;
}

inline double walk_sum(const std::vector<IdList>& nb, std::size_t at, std::size_t target, std::size_t steps) {
  if (steps == 0) return at == target ? 1.0 : 0.0;
  double sum = 0.0;
  for (Id next : nb[at]) sum += walk_sum(nb, next, target, steps - 1) / static_cast<double>(nb[next].size());
  return sum;
}

}  // namespace detail

// E = d sqrt(|N(u)| / |N(x)|) sum_h prod_{k=1..l} 1 / |N(x_h^k)|, the sum over
// l-step walks x = x_h^0, ..., x_h^l = u.
inline double enrichment_analytic(const Dataset& ds, std::size_t u, std::size_t x, std::size_t l,
                                  std::size_t d) {
  if (l > kMaxEnrichmentLayers) fail(ErrorKind::capacity, "enrichment: l is capped at 4");
  require(u < ds.num_nodes() && x < ds.num_nodes(), "enrichment: node out of range");
  if (l == 0) return u == x ? static_cast<double>(d) : 0.0;
  const auto nb = detail::node_neighbors(ds);
  if (nb[u].empty() || nb[x].empty()) return 0.0;
  const double walks = detail::walk_sum(nb, x, u, l);
  return static_cast<double>(d) * std::sqrt(static_cast<double>(nb[u].size()) / nb[x].size()) * walks;
}

// d * (A_norm^l)[u, x] from a dense matrix power.
inline double enrichment_oracle(const Dataset& ds, std::size_t u, std::size_t x, std::size_t l, std::size_t d) {
  const std::size_t n = ds.num_nodes();
  if (n > kMaxOracleNodes) fail(ErrorKind::capacity, "enrichment oracle: graph exceeds 200 nodes");
  require(u < n && x < n, "enrichment: node out of range");
  const auto nb = detail::node_neighbors(ds);
  std::vector<double> a(n * n, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (Id q : nb[p]) a[p * n + q] = 1.0 / std::sqrt(static_cast<double>(nb[p].size()) * nb[q].size());
  std::vector<double> power(n * n, 0.0);
  for (std::size_t p = 0; p < n; ++p) power[p * n + p] = 1.0;
  std::vector<double> next(n * n);
  for (std::size_t step = 0; step < l; ++step) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < n; ++k) {
        const double v = power[p * n + k];
        if (v == 0.0) continue;
        for (std::size_t q = 0; q < n; ++q) next[p * n + q] += v * a[k * n + q];
      }
    std::swap(power, next);
  }
  return static_cast<double>(d) * std::fabs(power[u * n + x]);
}

}  // namespace bingear
