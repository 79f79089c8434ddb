#pragma once

// Row-major GEMM loop nests shared by the scalar and AVX2 kernel sets; each
// translation unit plugs in its own dot/axpy so the inner loops inline.

#include <cstddef>

namespace compass::simd::detail {

/// C(m x n) += A(m x k) * B(k x n)
template <class T, class Axpy>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, Axpy axpy) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy(ai[p], b + p * n, ci, n);
  }
}

/// C(m x n) += A(m x k) * B(n x k)^T
template <class T, class Dot>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, Dot dot) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += dot(ai, b + j * k, k);
  }
}

/// C(m x n) += A(k x m)^T * B(k x n)
template <class T, class Axpy>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, Axpy axpy) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) axpy(ap[i], bp, c + i * n, n);
  }
}

}  // namespace compass::simd::detail
