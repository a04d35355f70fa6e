#ifndef CRITAFFINE_PARALLEL_HPP
#define CRITAFFINE_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace critaffine {

/// Runs task(i) for i in [0, n) on up to `workers` threads.
///
/// Tasks must write only to slot i of caller-owned storage; the caller then
/// reduces in index order, which makes results independent of scheduling.
/// The first exception thrown by any task is rethrown after all threads join.
template <class Task>
void parallel_for(std::size_t n, int workers, Task&& task) {
  const std::size_t nthreads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace critaffine

#endif  // CRITAFFINE_PARALLEL_HPP
