#ifndef AUTODA_PARALLEL_HPP
#define AUTODA_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace autoda {

// Runs fn(0..n-1) across up to `jobs` worker threads. fn must not throw;
// callers that need failure reporting record it into their own slots.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (n == 0) return;
  unsigned workers = jobs == 0 ? 1 : jobs;
  if (static_cast<std::size_t>(workers) > n) workers = static_cast<unsigned>(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace autoda

#endif  // AUTODA_PARALLEL_HPP
