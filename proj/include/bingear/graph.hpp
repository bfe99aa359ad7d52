#pragma once

// Interaction datasets and the symmetric-normalized bipartite adjacency.
//
// Node numbering used throughout the library: users occupy [0, M), items
// occupy [M, M + N). Dataset lists hold item ids in [0, N); only the
// adjacency and the layer tables use the combined node space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "bingear/binary_io.hpp"
#include "bingear/error.hpp"
#include "bingear/matrix.hpp"
#include "bingear/parallel.hpp"

namespace bingear {

using Id = std::uint32_t;
using IdList = std::vector<Id>;

struct Edge {
  Id user;
  Id item;
  bool operator==(const Edge&) const = default;
};

struct Dataset {
  Id num_users = 0;
  Id num_items = 0;
  std::vector<IdList> train;       // N(u), sorted, unique
  std::vector<IdList> test;        // held-out items per user, sorted, unique
  std::vector<IdList> item_users;  // N(i), transpose of train
  // Duplicate (user, item) tokens dropped while normalizing the lists.
  std::size_t duplicate_warnings = 0;
  // Raw ids of the source data when ingest remapped them; empty = identity.
  std::vector<std::uint64_t> user_ids;
  std::vector<std::uint64_t> item_ids;

  std::size_t num_nodes() const { return std::size_t{num_users} + num_items; }
  Id item_node(Id item) const { return num_users + item; }

  std::size_t train_count() const {
    std::size_t n = 0;
    for (const auto& l : train) n += l.size();
    return n;
  }
  std::size_t test_count() const {
    std::size_t n = 0;
    for (const auto& l : test) n += l.size();
    return n;
  }

  std::vector<Edge> train_edges() const {
    std::vector<Edge> edges;
    edges.reserve(train_count());
    for (Id u = 0; u < num_users; ++u)
      for (Id i : train[u]) edges.push_back({u, i});
    return edges;
  }

  bool interacted(Id user, Id item) const {
    return std::binary_search(train[user].begin(), train[user].end(), item);
  }

  // Sorts and deduplicates the per-user lists, rebuilds the reverse lists and
  // checks every invariant. Throws ErrorKind::data on violation.
  void normalize();

  static Dataset from_lists(Id num_users, Id num_items, std::vector<IdList> train,
                            std::vector<IdList> test) {
    Dataset ds;
    ds.num_users = num_users;
    ds.num_items = num_items;
    ds.train = std::move(train);
    ds.test = std::move(test);
    ds.train.resize(num_users);
    ds.test.resize(num_users);
    ds.normalize();
    return ds;
  }

  bool operator==(const Dataset& o) const {
    return num_users == o.num_users && num_items == o.num_items && train == o.train &&
           test == o.test && user_ids == o.user_ids && item_ids == o.item_ids;
  }
};

namespace detail {

inline std::size_t sort_unique(IdList& list) {
  std::sort(list.begin(), list.end());
  const auto end = std::unique(list.begin(), list.end());
  const auto dropped = static_cast<std::size_t>(list.end() - end);
  list.erase(end, list.end());
  return dropped;
}

}  // namespace detail

inline void Dataset::normalize() {
  train.resize(num_users);
  test.resize(num_users);
  for (auto& l : train) duplicate_warnings += detail::sort_unique(l);
  for (auto& l : test) duplicate_warnings += detail::sort_unique(l);

  item_users.assign(num_items, {});
  std::vector<std::string> overlaps;
  std::size_t overlap_count = 0;
  for (Id u = 0; u < num_users; ++u) {
    for (Id i : train[u]) {
      if (i >= num_items) {
        fail(ErrorKind::data, "train item id " + std::to_string(i) + " out of range for user " +
                                  std::to_string(u));
      }
      item_users[i].push_back(u);
    }
    for (Id i : test[u]) {
      if (i >= num_items) {
        fail(ErrorKind::data, "test item id " + std::to_string(i) + " out of range for user " +
                                  std::to_string(u));
      }
      if (std::binary_search(train[u].begin(), train[u].end(), i)) {
        ++overlap_count;
        if (overlaps.size() < 20) {
          overlaps.push_back("(" + std::to_string(u) + "," + std::to_string(i) + ")");
        }
      }
    }
  }
  if (overlap_count > 0) {
    std::string msg = std::to_string(overlap_count) + " test interaction(s) duplicated in train:";
    for (const auto& s : overlaps) msg += " " + s;
    if (overlap_count > overlaps.size()) msg += " ...";
    fail(ErrorKind::data, msg);
  }
}

// ---------------------------------------------------------------------------
// Text format: one line per user, "user_id item_id item_id ...".

namespace detail {

struct ParsedLists {
  std::vector<IdList> lists;
  std::uint64_t max_item = 0;
  bool any_item = false;
  bool any_line = false;
};

inline ParsedLists parse_interaction_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open: " + path);
  ParsedLists out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream tokens(line);
    std::string token;
    std::optional<Id> user;
    while (tokens >> token) {
      std::uint64_t value = 0;
      bool ok = !token.empty() && token.size() <= 10;
      for (char ch : token) {
        if (ch < '0' || ch > '9') {
          ok = false;
          break;
        }
        value = value * 10 + static_cast<std::uint64_t>(ch - '0');
      }
      if (!ok || value >= std::numeric_limits<Id>::max()) {
        fail(ErrorKind::parse, path + ":" + std::to_string(line_no) + ": invalid id token '" +
                                   token + "'");
      }
      const auto id = static_cast<Id>(value);
      if (!user) {
        user = id;
        if (out.lists.size() <= id) out.lists.resize(std::size_t{id} + 1);
        out.any_line = true;
      } else {
        out.lists[*user].push_back(id);
        out.max_item = std::max<std::uint64_t>(out.max_item, id);
        out.any_item = true;
      }
    }
  }
  return out;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& train_path, const std::string& test_path) {
  auto train = detail::parse_interaction_file(train_path);
  auto test = detail::parse_interaction_file(test_path);
  if (!train.any_item) fail(ErrorKind::data, "invalid dataset: no train interactions in " + train_path);

  const std::size_t users = std::max(train.lists.size(), test.lists.size());
  std::uint64_t max_item = train.max_item;
  if (test.any_item) max_item = std::max(max_item, test.max_item);
  if (users + max_item + 1 >= std::numeric_limits<Id>::max()) {
    fail(ErrorKind::capacity, "node count exceeds 32-bit id space");
  }
  return Dataset::from_lists(static_cast<Id>(users), static_cast<Id>(max_item + 1),
                             std::move(train.lists), std::move(test.lists));
}

// Writes lists back in the text format; users with an empty list are kept as
// a bare id line so the id space survives a round trip.
inline void write_interaction_file(const std::string& path, const std::vector<IdList>& lists) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot open for writing: " + path);
  for (std::size_t u = 0; u < lists.size(); ++u) {
    out << u;
    for (Id i : lists[u]) out << ' ' << i;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Binary cache "BGDS", version 1, little-endian:
//   magic[4] u16 version, u32 M, u32 N, u64 train_edges, u64 test_edges,
//   u64 user_map_len, u64 item_map_len,
//   train (u32 user, u32 item) x train_edges, test pairs x test_edges,
//   u64 raw user ids x user_map_len, u64 raw item ids x item_map_len.

inline constexpr std::uint16_t kDatasetCacheVersion = 1;

inline std::vector<char> encode_dataset(const Dataset& ds) {
  io::Writer w;
  w.magic("BGDS");
  w.put<std::uint16_t>(kDatasetCacheVersion);
  w.put<std::uint32_t>(ds.num_users);
  w.put<std::uint32_t>(ds.num_items);
  w.put<std::uint64_t>(ds.train_count());
  w.put<std::uint64_t>(ds.test_count());
  w.put<std::uint64_t>(ds.user_ids.size());
  w.put<std::uint64_t>(ds.item_ids.size());
  for (const auto* lists : {&ds.train, &ds.test}) {
    for (Id u = 0; u < ds.num_users; ++u) {
      for (Id i : (*lists)[u]) {
        w.put<std::uint32_t>(u);
        w.put<std::uint32_t>(i);
      }
    }
  }
  w.put_span<std::uint64_t>(ds.user_ids);
  w.put_span<std::uint64_t>(ds.item_ids);
  return w.bytes();
}

inline void save_dataset_cache(const Dataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

inline Dataset decode_dataset(io::Reader r) {
  r.expect_magic("BGDS");
  const auto version = r.get<std::uint16_t>();
  if (version != kDatasetCacheVersion) {
    fail(ErrorKind::format, r.name() + ": unsupported BGDS version " + std::to_string(version));
  }
  const Id m = r.get<std::uint32_t>();
  const Id n = r.get<std::uint32_t>();
  const auto train_edges = r.get<std::uint64_t>();
  const auto test_edges = r.get<std::uint64_t>();
  const auto user_map = r.get<std::uint64_t>();
  const auto item_map = r.get<std::uint64_t>();
  std::vector<IdList> train(m), test(m);
  auto read_pairs = [&](std::uint64_t count, std::vector<IdList>& lists) {
    for (std::uint64_t e = 0; e < count; ++e) {
      const Id u = r.get<std::uint32_t>();
      const Id i = r.get<std::uint32_t>();
      if (u >= m) fail(ErrorKind::format, r.name() + ": user id out of range");
      lists[u].push_back(i);
    }
  };
  read_pairs(train_edges, train);
  read_pairs(test_edges, test);
  Dataset ds = Dataset::from_lists(m, n, std::move(train), std::move(test));
  ds.user_ids.resize(user_map);
  ds.item_ids.resize(item_map);
  r.get_span<std::uint64_t>(ds.user_ids);
  r.get_span<std::uint64_t>(ds.item_ids);
  r.expect_end();
  return ds;
}

inline Dataset load_dataset_cache(const std::string& path) {
  return decode_dataset(io::Reader::from_file(path));
}

// ---------------------------------------------------------------------------

struct ValidationReport {
  Id num_users = 0;
  Id num_items = 0;
  std::size_t train_interactions = 0;
  std::size_t test_interactions = 0;
  std::size_t interactions = 0;  // train + test
  double density = 0.0;          // interactions / (M * N)
  std::size_t isolated_users = 0;  // no train edge
  std::size_t isolated_items = 0;
  std::size_t users_without_test = 0;  // skipped during evaluation
  std::size_t duplicate_warnings = 0;
  bool evaluation_possible = true;

  std::size_t isolated_nodes() const { return isolated_users + isolated_items; }

  std::string to_text() const {
    std::ostringstream os;
    os << "users " << num_users << "\n"
       << "items " << num_items << "\n"
       << "train_interactions " << train_interactions << "\n"
       << "test_interactions " << test_interactions << "\n"
       << "interactions " << interactions << "\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "density " << density << "\n";
    os.unsetf(std::ios::fixed);
    os << "isolated_users " << isolated_users << "\n"
       << "isolated_items " << isolated_items << "\n"
       << "users_without_test " << users_without_test << "\n"
       << "duplicate_warnings " << duplicate_warnings << "\n";
    if (!evaluation_possible) os << "WARNING no evaluation possible: every test list is empty\n";
    return os.str();
  }
};

inline ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport rep;
  rep.num_users = ds.num_users;
  rep.num_items = ds.num_items;
  rep.train_interactions = ds.train_count();
  rep.test_interactions = ds.test_count();
  rep.interactions = rep.train_interactions + rep.test_interactions;
  const double cells = static_cast<double>(ds.num_users) * static_cast<double>(ds.num_items);
  rep.density = cells > 0 ? static_cast<double>(rep.interactions) / cells : 0.0;
  for (Id u = 0; u < ds.num_users; ++u) {
    if (ds.train[u].empty()) ++rep.isolated_users;
    if (ds.test[u].empty()) ++rep.users_without_test;
  }
  for (Id i = 0; i < ds.num_items; ++i) {
    if (ds.item_users[i].empty()) ++rep.isolated_items;
  }
  rep.duplicate_warnings = ds.duplicate_warnings;
  rep.evaluation_possible = rep.test_interactions > 0;
  return rep;
}

// ---------------------------------------------------------------------------

// Sparse D^{-1/2} A D^{-1/2} over the (M + N) x (M + N) bipartite graph in CSR
// form. Values are kept in double for inspection and in float for the
// propagation kernel.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;

  Id num_users() const { return num_users_; }
  Id num_items() const { return num_items_; }
  std::size_t nodes() const { return degree_.size(); }
  std::size_t nonzeros() const { return col_.size(); }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<Id>& col() const { return col_; }
  const std::vector<double>& values() const { return value_; }
  const std::vector<Id>& degree() const { return degree_; }

  // Stored value, or 0 when (a, b) is not an edge.
  double entry(std::size_t a, std::size_t b) const {
    const auto first = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[a]);
    const auto last = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[a + 1]);
    const auto it = std::lower_bound(first, last, static_cast<Id>(b));
    if (it == last || *it != b) return 0.0;
    return value_[static_cast<std::size_t>(it - col_.begin())];
  }

  // out = A * x. The matrix is symmetric, so this is also the transpose
  // product used when back-propagating through a layer.
  template <typename Real>
  void multiply(const BasicMatrix<Real>& x, BasicMatrix<Real>& out) const {
    require(x.rows() == nodes(), "adjacency multiply: row count mismatch");
    if (out.rows() != x.rows() || out.cols() != x.cols()) out = BasicMatrix<Real>(x.rows(), x.cols());
    parallel_chunks(nodes(), [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r) {
        auto dst = out.row(r);
        std::fill(dst.begin(), dst.end(), Real(0));
        for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
          Real v;
          if constexpr (std::is_same_v<Real, float>) {
            v = value_f32_[k];
          } else {
            v = static_cast<Real>(value_[k]);
          }
          axpy<Real>(v, x.row(col_[k]), dst);
        }
      }
    });
  }

  friend NormalizedAdjacency build_normalized_adjacency(const Dataset& ds);

 private:
  Id num_users_ = 0;
  Id num_items_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<Id> col_;
  std::vector<double> value_;
  std::vector<float> value_f32_;
  std::vector<Id> degree_;
};

inline NormalizedAdjacency build_normalized_adjacency(const Dataset& ds) {
  const std::size_t nodes = ds.num_nodes();
  if (nodes >= std::numeric_limits<Id>::max()) {
    fail(ErrorKind::capacity, "node count exceeds 32-bit index width");
  }
  const std::size_t edges = ds.train_count();
  if (edges > std::numeric_limits<std::size_t>::max() / 2) {
    fail(ErrorKind::capacity, "edge count exceeds platform index width");
  }

  NormalizedAdjacency adj;
  adj.num_users_ = ds.num_users;
  adj.num_items_ = ds.num_items;
  adj.degree_.assign(nodes, 0);
  for (Id u = 0; u < ds.num_users; ++u) adj.degree_[u] = static_cast<Id>(ds.train[u].size());
  for (Id i = 0; i < ds.num_items; ++i) {
    adj.degree_[ds.item_node(i)] = static_cast<Id>(ds.item_users[i].size());
  }

  adj.row_ptr_.assign(nodes + 1, 0);
  for (std::size_t x = 0; x < nodes; ++x) adj.row_ptr_[x + 1] = adj.row_ptr_[x] + adj.degree_[x];
  adj.col_.resize(2 * edges);
  adj.value_.resize(2 * edges);
  adj.value_f32_.resize(2 * edges);

  auto emit = [&](std::size_t row, std::size_t slot, Id other) {
    const std::size_t k = adj.row_ptr_[row] + slot;
    adj.col_[k] = other;
    adj.value_[k] =
        1.0 / std::sqrt(static_cast<double>(adj.degree_[row]) * static_cast<double>(adj.degree_[other]));
    adj.value_f32_[k] = static_cast<float>(adj.value_[k]);
  };
  // User rows list item nodes ascending; item rows list user nodes ascending,
  // so every row is sorted by column.
  for (Id u = 0; u < ds.num_users; ++u) {
    for (std::size_t s = 0; s < ds.train[u].size(); ++s) emit(u, s, ds.item_node(ds.train[u][s]));
  }
  for (Id i = 0; i < ds.num_items; ++i) {
    for (std::size_t s = 0; s < ds.item_users[i].size(); ++s) {
      emit(ds.item_node(i), s, ds.item_users[i][s]);
    }
  }
  return adj;
}

}  // namespace bingear
