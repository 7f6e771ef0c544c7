#ifndef EMO_PARALLEL_HPP
#define EMO_PARALLEL_HPP

#include <cstddef>
#include <cstdint>

namespace emo {

// Execution policy for the data-parallel kernels. Every parallel kernel has
// a serial twin that produces bit-identical results; tests compare the two
// and the benchmark tool times them. Parallel loops only split independent
// output elements, never a reduction, so thread count cannot change results.
enum class Exec { Serial, Parallel };

// Process-wide default policy and thread cap (0 = OpenMP default).
Exec default_exec();
void set_default_exec(Exec e);
int max_threads();
void set_max_threads(int n);

// Number of threads a Parallel region would actually use.
int effective_threads();

namespace par {

// parallel_for(n, exec, f): f(i) for i in [0, n). Grain keeps tiny loops
// serial regardless of policy.
template <typename F>
void parallel_for(std::size_t n, Exec exec, F&& f, std::size_t grain = 1) {
  if (exec == Exec::Parallel && n > grain) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      f(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) f(i);
  }
}

template <typename F>
void parallel_for(std::size_t n, F&& f, std::size_t grain = 1) {
  parallel_for(n, default_exec(), static_cast<F&&>(f), grain);
}

}  // namespace par
}  // namespace emo

#endif
