#pragma once

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtfatt {

inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// CLI precedence: --threads flag, then MTFATT_THREADS, then the OpenMP
// default.
inline void configure_threads(int flag_value) {
  if (flag_value > 0) {
    set_thread_count(flag_value);
    return;
  }
  if (const char* env = std::getenv("MTFATT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) set_thread_count(n);
  }
}

}  // namespace mtfatt
