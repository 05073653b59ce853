#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace evssm {

// Runs fn(begin, end) on disjoint index ranges. With threads <= 1 the call
// degenerates to fn(0, n) on the calling thread. Range assignment depends
// only on (n, threads), so results are reproducible for a fixed thread count.
inline void parallel_ranges(std::size_t n, int threads,
                            const std::function<void(std::size_t, std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    if (n > 0) fn(0, n);
    return;
  }
  std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(t);
  std::size_t chunk = (n + t - 1) / t;
  for (std::size_t i = 0; i < t; ++i) {
    std::size_t lo = i * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace evssm
