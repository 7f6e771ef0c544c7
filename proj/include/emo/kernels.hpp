#ifndef EMO_KERNELS_HPP
#define EMO_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "emo/parallel.hpp"

// Dense numeric kernels shared by the autodiff layers and the language
// models. Row-major throughout. Each kernel takes an Exec policy; the
// parallel path splits independent output rows/columns only, so results
// are bit-identical to the serial path.

namespace emo::kern {

// C (m x n) = A (m x k) * B (k x n), optionally accumulating into C.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate, Exec exec) {
  par::parallel_for(
      m, exec,
      [&](std::size_t i) {
        T* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
          const T ail = arow[l];
          if (ail == T(0)) continue;
          const T* brow = b + l * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
        }
      },
      4);
}

// C (m x n) = A (m x k) * B^T (B is n x k).
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate, Exec exec) {
  par::parallel_for(
      m, exec,
      [&](std::size_t i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const T* brow = b + j * k;
          T s = 0;
          for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
          crow[j] = accumulate ? crow[j] + s : s;
        }
      },
      4);
}

// C (k x n) = A^T (A is m x k) * B (m x n).
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate, Exec exec) {
  par::parallel_for(
      k, exec,
      [&](std::size_t l) {
        T* crow = c + l * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        for (std::size_t i = 0; i < m; ++i) {
          const T ail = a[i * k + l];
          if (ail == T(0)) continue;
          const T* brow = b + i * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
        }
      },
      4);
}

// Row-wise softmax with max subtraction; (rows x n) in place or out of place.
template <typename T>
void softmax_rows(const T* in, T* out, std::size_t rows, std::size_t n,
                  Exec exec) {
  par::parallel_for(
      rows, exec,
      [&](std::size_t r) {
        const T* x = in + r * n;
        T* y = out + r * n;
        T mx = x[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
          y[j] = std::exp(x[j] - mx);
          sum += y[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
      },
      8);
}

// 1-d convolution over time, stride 1, same padding.
// x: (time x cin) one sequence, w: (kw x cin x cout), y: (time x cout).
// Positions >= len are left untouched by the caller's zero fill.
template <typename T>
void conv1d_forward(const T* x, const T* w, const T* bias, T* y,
                    std::size_t len, std::size_t cin, std::size_t cout,
                    std::size_t kw, Exec exec) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw) / 2;
  par::parallel_for(
      len, exec,
      [&](std::size_t t) {
        T* yrow = y + t * cout;
        for (std::size_t f = 0; f < cout; ++f) yrow[f] = bias[f];
        for (std::size_t dk = 0; dk < kw; ++dk) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dk) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          const T* xrow = x + src * cin;
          const T* wk = w + dk * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = xrow[ci];
            if (xv == T(0)) continue;
            const T* wrow = wk + ci * cout;
            for (std::size_t f = 0; f < cout; ++f) yrow[f] += xv * wrow[f];
          }
        }
      },
      2);
}

// Gradients for conv1d_forward. dx must be zero-initialized by the caller;
// dw/db accumulate. dw is parallelized over cout (independent columns).
template <typename T>
void conv1d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db,
                     std::size_t len, std::size_t cin, std::size_t cout,
                     std::size_t kw, Exec exec) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kw) / 2;
  // dx[t'] += dy[t] * w[dk]  where t' = t + dk - half
  par::parallel_for(
      len, exec,
      [&](std::size_t tp) {
        T* dxrow = dx + tp * cin;
        for (std::size_t dk = 0; dk < kw; ++dk) {
          const std::ptrdiff_t t =
              static_cast<std::ptrdiff_t>(tp) - static_cast<std::ptrdiff_t>(dk) + half;
          if (t < 0 || t >= static_cast<std::ptrdiff_t>(len)) continue;
          const T* dyrow = dy + t * cout;
          const T* wk = w + dk * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* wrow = wk + ci * cout;
            T s = 0;
            for (std::size_t f = 0; f < cout; ++f) s += dyrow[f] * wrow[f];
            dxrow[ci] += s;
          }
        }
      },
      2);
  par::parallel_for(
      cout, exec,
      [&](std::size_t f) {
        for (std::size_t dk = 0; dk < kw; ++dk) {
          for (std::size_t ci = 0; ci < cin; ++ci) {
            T s = 0;
            for (std::size_t t = 0; t < len; ++t) {
              const std::ptrdiff_t src =
                  static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dk) - half;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              s += x[src * cin + ci] * dy[t * cout + f];
            }
            dw[(dk * cin + ci) * cout + f] += s;
          }
        }
        T s = 0;
        for (std::size_t t = 0; t < len; ++t) s += dy[t * cout + f];
        db[f] += s;
      },
      2);
}

}  // namespace emo::kern

#endif
