#pragma once

#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace katana {

inline int hardware_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

// Runs fn(i) for i in [0, n). Iterations must be independent; the result is
// then identical to the serial loop for any thread count. Exceptions are
// captured and rethrown after the loop (first one wins).
template <typename F>
void parallel_for(long long n, F&& fn) {
#ifdef _OPENMP
  if (n > 1 && !omp_in_parallel()) {
    std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
#pragma omp critical(katana_parallel_err)
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
    return;
  }
#endif
  for (long long i = 0; i < n; ++i) fn(i);
}

// Same, with one state object per worker (scratch buffers, tapes). make()
// must yield a fresh state; fn(i, state) may mutate it freely.
template <typename MakeState, typename F>
void parallel_for_state(long long n, MakeState&& make, F&& fn) {
#ifdef _OPENMP
  if (n > 1 && !omp_in_parallel()) {
    std::exception_ptr err = nullptr;
#pragma omp parallel
    {
      auto state = make();
#pragma omp for schedule(dynamic, 1)
      for (long long i = 0; i < n; ++i) {
        try {
          fn(i, state);
        } catch (...) {
#pragma omp critical(katana_parallel_state_err)
          if (!err) err = std::current_exception();
        }
      }
    }
    if (err) std::rethrow_exception(err);
    return;
  }
#endif
  auto state = make();
  for (long long i = 0; i < n; ++i) fn(i, state);
}

}  // namespace katana
