#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace bingear {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
  static std::atomic<unsigned> n{0};
  return n;
}
}  // namespace detail

// Worker count for parallel loops. 0 means "not set": fall back to
// BINGEAR_THREADS, then to 1.
inline void set_threads(unsigned n) { detail::thread_setting() = n; }

inline unsigned thread_count() {
  unsigned n = detail::thread_setting();
  if (n != 0) return n;
  if (const char* env = std::getenv("BINGEAR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return 1;
}

// Runs body(chunk_index, begin, end) over a fixed split of [0, n). The split
// depends only on n and the worker count, so per-chunk results reduced in
// chunk order are reproducible.
template <typename Body>
void parallel_chunks(std::size_t n, Body&& body, unsigned workers = thread_count()) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    body(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t step = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * step);
    const std::size_t end = std::min(n, begin + step);
    pool.emplace_back([&body, w, begin, end] { body(std::size_t{w}, begin, end); });
  }
  for (auto& t : pool) t.join();
}

template <typename Body>
void parallel_for(std::size_t n, Body&& body, unsigned workers = thread_count()) {
  parallel_chunks(
      n,
      [&body](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) body(i);
      },
      workers);
}

}  // namespace bingear
