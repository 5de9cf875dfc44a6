#pragma once

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace imip {

inline unsigned hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Static contiguous partition of [begin, end) across worker threads.
// Every index is processed by exactly one thread, so results are identical
// for any thread count as long as f(i) writes only outputs owned by i.
// Small ranges (< min_parallel items) run inline on the calling thread.
template <typename F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& f,
                  std::int64_t min_parallel = 64) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const unsigned hw = hardware_threads();
  if (n < min_parallel || hw == 1) {
    for (std::int64_t i = begin; i < end; ++i) f(i);
    return;
  }
  const unsigned workers = unsigned(std::min<std::int64_t>(hw, n));
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::int64_t chunk = (n + workers - 1) / workers;
  auto run = [&f, begin, end, chunk](unsigned t) {
    const std::int64_t lo = begin + std::int64_t(t) * chunk;
    const std::int64_t hi = std::min(end, lo + chunk);
    for (std::int64_t i = lo; i < hi; ++i) f(i);
  };
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(run, t);
  run(0);
  for (auto& th : pool) th.join();
}

}  // namespace imip
