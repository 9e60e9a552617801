#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace msmemu {

// Worker count: MSM_EMU_THREADS when set (>= 1), else hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("MSM_EMU_THREADS")) {
    long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) return static_cast<int>(std::min<long>(cap, 256));
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// Static block partition of [0, n); each index is processed exactly once and
// bodies must write only to their own slot, so results are identical for any
// worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& body) {
  int workers = worker_count();
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    std::size_t lo = n * t / w, hi = n * (t + 1) / w;
    pool.emplace_back([&body, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace msmemu
