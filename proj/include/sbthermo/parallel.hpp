#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sbthermo {

// Resolves a worker-count request; 0 means "all hardware threads".
inline unsigned resolve_workers(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, count) across `workers` threads. Indices are
// handed out in chunks; body must only write state owned by index i. The
// first exception (lowest index among those thrown) is rethrown.
template <typename Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
  workers = resolve_workers(workers);
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  constexpr std::size_t kChunk = 16;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = count;

  auto run = [&] {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t begin = next.fetch_add(kChunk);
      if (begin >= count) break;
      const std::size_t end = std::min(count, begin + kChunk);
      for (std::size_t i = begin; i < end; ++i) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (i < first_error_index) {
            first_error_index = i;
            first_error = std::current_exception();
          }
          stop = true;
          break;
        }
      }
    }
  };

  std::vector<std::jthread> pool;
  const unsigned n = static_cast<unsigned>(std::min<std::size_t>(workers, count));
  pool.reserve(n - 1);
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(run);
  run();
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace sbthermo
