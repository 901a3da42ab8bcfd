#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace gfpc {

/// Thread count from GFPC_THREADS, falling back to 1.
inline unsigned threads_from_env() {
  if (const char* v = std::getenv("GFPC_THREADS")) {
    try {
      const long n = std::stol(v);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (...) {
    }
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must
/// write only its own output slot; callers reduce afterwards in index order,
/// which keeps results independent of scheduling. The first exception thrown
/// by any worker is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += workers) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace gfpc
