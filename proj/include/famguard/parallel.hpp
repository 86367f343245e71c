#pragma once

#include <cstddef>
#include <exception>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace famguard {

/// Runs fn(i) for i in [0, n) on up to `jobs` OpenMP threads (serially when jobs <= 1 or
/// OpenMP is unavailable). Exceptions are captured per index; the lowest-index one is rethrown
/// after all iterations finish, so failures do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#ifdef _OPENMP
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic) num_threads(jobs > 1 ? jobs : 1) if (jobs > 1)
  for (long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
#else
  (void)jobs;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
#endif
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace famguard
