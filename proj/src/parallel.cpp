#include "usd/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace usd {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
  if (n < 1) n = 1;
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int init_threads_from_env() {
  const char* env = std::getenv("USD_THREADS");
  if (env != nullptr) {
    int cap = 0;
    try {
      cap = std::stoi(env);
    } catch (...) {
      cap = 0;
    }
    if (cap >= 1 && cap < max_threads()) set_threads(cap);
  }
  return max_threads();
}

}  // namespace usd
