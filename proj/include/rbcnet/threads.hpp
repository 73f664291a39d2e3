#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace rbcnet {

// Process-wide worker cap (the CLI --threads flag). 1 means sequential.
inline int& worker_count() {
  static int n = 1;
  return n;
}

// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; each
// item is executed exactly once in a fixed chunk, so results are identical
// to the sequential order regardless of worker count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const int workers = worker_count();
  if (workers <= 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const size_t k = std::min<size_t>(static_cast<size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(k);
  for (size_t t = 0; t < k; ++t) {
    pool.emplace_back([&, t] {
      for (size_t i = t; i < n; i += k) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace rbcnet
