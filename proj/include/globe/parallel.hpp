#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace globe {

/// Runs fn(task, worker) for task in [0, n_tasks). Worker w handles tasks
/// w, w + T, w + 2T, ... so the task-to-worker map depends only on T.
template <class Fn>
void parallel_for(std::size_t n_tasks, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_tasks)));
  if (workers <= 1) {
    for (std::size_t t = 0; t < n_tasks; ++t) fn(t, 0);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t t = static_cast<std::size_t>(w); t < n_tasks; t += static_cast<std::size_t>(workers)) {
          fn(t, w);
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace globe
