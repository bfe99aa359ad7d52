#pragma once

// Desk-scale data: a MovieLens-ratings subsampler (top users x top items by
// degree, per-user 80/20 split, dense remapped ids) and a synthetic stand-in
// with the same shape for machines without the ratings file.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/random.hpp"

namespace bingear {

namespace detail {

// Per-user random split; every user with interactions keeps >= 1 train item.
inline Dataset split_interactions(Id users, Id items, std::vector<IdList> lists, double test_fraction,
                                  std::uint64_t seed) {
  std::vector<IdList> train(users), test(users);
  for (Id u = 0; u < users; ++u) {
    IdList& l = lists[u];
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    StreamRng rng(seed, "split", {u});
    for (std::size_t k = l.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(l[k - 1], l[pick(rng)]);
    }
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(l.size())));
    if (n_test >= l.size()) n_test = l.empty() ? 0 : l.size() - 1;
    test[u].assign(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(n_test));
    train[u].assign(l.begin() + static_cast<std::ptrdiff_t>(n_test), l.end());
  }
  return Dataset::from_lists(users, items, std::move(train), std::move(test));
}

}  // namespace detail

struct SurrogateSpec {
  Id users = 2000;
  Id items = 1500;
  double density = 0.042;  // interactions / (users * items)
  std::size_t factors = 16;
  double signal = 2.5;      // weight of the latent affinity
  double popularity = 1.0;  // weight of the log-rank item bias
  double test_fraction = 0.2;
  std::uint64_t seed = 7;
};

// Users pick items by Gumbel-top-n over affinity + popularity, with n drawn
// from a log-normal around the target density.
inline Dataset generate_surrogate(const SurrogateSpec& s) {
  require(s.users > 0 && s.items > 1, "surrogate: need users and at least two items");
  StreamRng rng(s.seed, "surrogate", {});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> uf(std::size_t{s.users} * s.factors), vf(std::size_t{s.items} * s.factors);
  for (double& x : uf) x = normal(rng);
  for (double& x : vf) x = normal(rng);
  std::vector<Id> rank(s.items);
  std::iota(rank.begin(), rank.end(), Id{0});
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> bias(s.items);
  for (Id i = 0; i < s.items; ++i) bias[i] = -s.popularity * std::log(1.0 + rank[i]);

  const double mean = std::max(1.0, s.density * s.items);
  const double sigma = 0.7;
  std::lognormal_distribution<double> count(std::log(mean) - sigma * sigma / 2, sigma);
  std::exponential_distribution<double> expo(1.0);
  const double scale = s.signal / std::sqrt(static_cast<double>(s.factors));

  std::vector<IdList> lists(s.users);
  std::vector<std::pair<double, Id>> keyed(s.items);
  for (Id u = 0; u < s.users; ++u) {
    const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(count(rng))), 2, s.items - 1);
    for (Id i = 0; i < s.items; ++i) {
      double a = 0.0;
      for (std::size_t k = 0; k < s.factors; ++k) a += uf[u * s.factors + k] * vf[i * s.factors + k];
      const double gumbel = -std::log(expo(rng));
      keyed[i] = {scale * a + bias[i] + gumbel, i};
    }
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(n), keyed.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; k < n; ++k) lists[u].push_back(keyed[k].second);
  }
  return detail::split_interactions(s.users, s.items, std::move(lists), s.test_fraction, s.seed);
}

// "user::item::rating::timestamp" lines (MovieLens ratings.dat). Keeps the
// `items` most-rated items, then the `users` most active users on those
// items; ties by ascending raw id. Ids are remapped densely and the raw ids
// kept in the dataset.
inline Dataset subsample_ratings(const std::string& path, Id users, Id items, double test_fraction,
                                 std::uint64_t seed) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::data, "cannot open " + path);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto a = line.find("::");
    const auto b = a == std::string::npos ? a : line.find("::", a + 2);
    if (b == std::string::npos) fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": expected user::item::...");
    try {
      pairs.emplace_back(std::stoull(line.substr(0, a)), std::stoull(line.substr(a + 2, b - a - 2)));
    } catch (const std::exception&) {
      fail(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": invalid id token");
    }
  }
  auto top_by_count = [](const std::unordered_map<std::uint64_t, std::size_t>& counts, std::size_t n) {
    std::vector<std::pair<std::uint64_t, std::size_t>> v(counts.begin(), counts.end());
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) {
      return x.second > y.second || (x.second == y.second && x.first < y.first);
    });
    if (v.size() > n) v.resize(n);
    std::vector<std::uint64_t> ids;
    for (const auto& [id, c] : v) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  std::unordered_map<std::uint64_t, std::size_t> item_count, user_count;
  for (const auto& [u, i] : pairs) ++item_count[i];
  const auto kept_items = top_by_count(item_count, items);
  auto item_index = [&](std::uint64_t raw) -> long long {
    const auto it = std::lower_bound(kept_items.begin(), kept_items.end(), raw);
    return it != kept_items.end() && *it == raw ? it - kept_items.begin() : -1;
  };
  for (const auto& [u, i] : pairs)
    if (item_index(i) >= 0) ++user_count[u];
  const auto kept_users = top_by_count(user_count, users);
  std::vector<IdList> lists(kept_users.size());
  for (const auto& [u, i] : pairs) {
    const auto uit = std::lower_bound(kept_users.begin(), kept_users.end(), u);
    if (uit == kept_users.end() || *uit != u) continue;
    const long long ii = item_index(i);
    if (ii < 0) continue;
    lists[static_cast<std::size_t>(uit - kept_users.begin())].push_back(static_cast<Id>(ii));
  }
  Dataset ds = detail::split_interactions(static_cast<Id>(kept_users.size()), static_cast<Id>(kept_items.size()),
                                          std::move(lists), test_fraction, seed);
  ds.user_ids = kept_users;
  ds.item_ids = kept_items;
  return ds;
}

}  // namespace bingear
