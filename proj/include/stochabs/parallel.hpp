#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace stochabs {

/// Static partition over [0, n); each index writes only its own output slot,
/// so results are identical for any job count.
inline void parallel_for(long n, int jobs, const std::function<void(long)>& fn) {
  if (jobs <= 1 || n < 2) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<long>(jobs, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([=, &fn] {
      for (long i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline int default_jobs() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

}  // namespace stochabs
