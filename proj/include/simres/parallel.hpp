#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace simres {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}
}  // namespace detail

/// Caps the number of worker threads used inside ops. Results never depend on
/// this value: every parallel loop writes disjoint outputs and reductions are
/// performed in a fixed order afterwards.
inline void set_num_threads(int n) { detail::thread_cap().store(std::max(1, n)); }
inline int num_threads() { return detail::thread_cap().load(); }

/// Runs fn(i) for i in [begin, end) over contiguous static chunks.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn) {
  if (end <= begin) return;
  const std::size_t count = end - begin;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), count);
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace simres
