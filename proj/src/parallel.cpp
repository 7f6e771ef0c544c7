#include "emo/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <atomic>

namespace emo {

namespace {
std::atomic<Exec> g_exec{Exec::Parallel};
std::atomic<int> g_max_threads{0};
}  // namespace

Exec default_exec() { return g_exec.load(); }
void set_default_exec(Exec e) { g_exec.store(e); }

int max_threads() { return g_max_threads.load(); }

void set_max_threads(int n) {
  g_max_threads.store(n);
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int effective_threads() {
#ifdef _OPENMP
  int hw = omp_get_max_threads();
  int cap = g_max_threads.load();
  return cap > 0 ? std::min(cap, hw) : hw;
#else
  return 1;
#endif
}

}  // namespace emo
