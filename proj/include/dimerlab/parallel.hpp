#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace dimerlab {

inline int default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

inline double tree_sum(std::vector<double> v) {
  if (v.empty()) return 0.0;
  while (v.size() > 1) {
    std::vector<double> next((v.size() + 1) / 2);
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = v[2 * i] + (2 * i + 1 < v.size() ? v[2 * i + 1] : 0.0);
    v.swap(next);
  }
  return v[0];
}

// Sum of f(i) over [0, n). Chunk boundaries do not depend on the thread count, so the result is
// reproducible bit for bit.
template <class F>
double parallel_sum(std::size_t n, F&& f, int threads = 1, std::size_t chunk = 64) {
  const std::size_t nchunks = (n + chunk - 1) / chunk;
  std::vector<double> part(nchunks, 0.0);
  auto work = [&](std::size_t c) {
    double s = 0.0;
    for (std::size_t i = c * chunk; i < std::min(n, (c + 1) * chunk); ++i) s += f(i);
    part[c] = s;
  };
  threads = std::max(1, std::min<int>(threads, static_cast<int>(nchunks)));
  if (threads == 1) {
    for (std::size_t c = 0; c < nchunks; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t c; (c = next.fetch_add(1)) < nchunks;) work(c);
      });
    for (auto& th : pool) th.join();
  }
  return tree_sum(std::move(part));
}

}  // namespace dimerlab
