#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gdim {

namespace detail {
inline std::atomic<unsigned>& default_thread_count() {
  static std::atomic<unsigned> count{1};
  return count;
}
}  // namespace detail

/// Worker cap used when a routine is called with threads == 0.
inline void set_default_threads(unsigned n) { detail::default_thread_count() = std::max(1u, n); }
inline unsigned default_threads() { return detail::default_thread_count(); }

/// Calls fn(i) for i in [0, n). Each index is visited exactly once; callers
/// write into slot i of a pre-sized buffer and reduce afterwards in index
/// order, so results do not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = default_threads();
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    try {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = n;
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace gdim
