#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace nbscreen {

inline int resolve_threads(int requested) {
  if (requested > 0) {
    return requested;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Static contiguous partition of [0, n) over `threads` workers. Each index
// must be independent; callers own determinism by writing to disjoint slots.
inline void parallel_for(std::int64_t n, int threads,
                         const std::function<void(std::int64_t)>& body) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) {
      break;
    }
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) {
        body(i);
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
}

}  // namespace nbscreen
