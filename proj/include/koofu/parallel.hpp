#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace koofu {

// Process-wide cap on data parallelism (CLI --threads). Default: all cores.
inline int& thread_cap() {
  static int cap = std::max(1u, std::thread::hardware_concurrency());
  return cap;
}

inline void set_thread_cap(int n) { thread_cap() = std::max(1, n); }

// Runs fn(begin, end) over [0, n) split into contiguous ranges, one per
// worker. Ranges are disjoint, so fn may write to per-index slots freely;
// the partitioning depends only on n and the thread cap, keeping any
// reduction done in range order deterministic.
inline void parallel_ranges(std::int64_t n,
                            const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(thread_cap(), n));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace koofu
