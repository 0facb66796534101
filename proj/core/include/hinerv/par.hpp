#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hinerv {

// Worker count: hardware threads capped by the HINERV_THREADS env var.
int worker_count();

// Runs f(i) for i in [0, n). Every index is computed by exactly one worker
// with a static partition, so results are independent of the thread count.
template <typename F>
void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
  if (n > 1 && worker_count() > 1) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
    for (int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace hinerv
