#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "bingear/bingear.hpp"

namespace testing_util {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("bingear_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                         std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Random bipartite graph; every user keeps at least one edge.
inline bingear::Dataset random_dataset(bingear::Id users, bingear::Id items, double p, std::uint64_t seed,
                                       double test_p = 0.0) {
  bingear::StreamRng rng(seed, "test-graph", {});
  std::vector<bingear::IdList> train(users), test(users);
  for (bingear::Id u = 0; u < users; ++u) {
    for (bingear::Id i = 0; i < items; ++i) {
      const float r = rng.uniform01();
      if (r < p) {
        train[u].push_back(i);
      } else if (r < p + test_p) {
        test[u].push_back(i);
      }
    }
    if (train[u].empty()) {
      const bingear::Id i = static_cast<bingear::Id>(rng() % items);
      train[u].push_back(i);
      std::erase(test[u], i);
    }
  }
  return bingear::Dataset::from_lists(users, items, std::move(train), std::move(test));
}

template <typename Real = float>
bingear::BasicMatrix<Real> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  bingear::BasicMatrix<Real> m(rows, cols);
  bingear::StreamRng rng(seed, "test-matrix", {});
  std::normal_distribution<double> nd(0.0, sd);
  for (Real& x : m.flat()) x = static_cast<Real>(nd(rng));
  return m;
}

// Dense D^{-1/2} A D^{-1/2} in double.
inline std::vector<double> dense_normalized(const bingear::Dataset& ds) {
  const std::size_t n = ds.num_nodes();
  std::vector<double> a(n * n, 0.0);
  std::vector<double> deg(n, 0.0);
  for (bingear::Id u = 0; u < ds.num_users; ++u)
    for (bingear::Id i : ds.train[u]) {
      a[u * n + ds.item_node(i)] = 1.0;
      a[ds.item_node(i) * n + u] = 1.0;
    }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) deg[r] += a[r * n + c];
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      if (a[r * n + c] != 0.0) a[r * n + c] /= std::sqrt(deg[r] * deg[c]);
  return a;
}

}  // namespace testing_util
