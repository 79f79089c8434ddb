// Compiled with -mavx2 -mfma. Nothing here may run unless the dispatcher has
// confirmed CPU support.
#include <immintrin.h>

#include "compass/simd.hpp"
#include "gemm_impl.hpp"

namespace compass::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, sums);
  return _mm_cvtss_f32(_mm_add_ss(sums, sh));
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sumsq_f64(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(a + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * a[i];
  return s;
}

void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  detail::gemm_nn(m, n, k, a, b, c, [](auto... xs) { return axpy_f64(xs...); });
}
void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  detail::gemm_nn(m, n, k, a, b, c, [](auto... xs) { return axpy_f32(xs...); });
}
void gemm_nt_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  detail::gemm_nt(m, n, k, a, b, c, [](auto... xs) { return dot_f64(xs...); });
}
void gemm_nt_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  detail::gemm_nt(m, n, k, a, b, c, [](auto... xs) { return dot_f32(xs...); });
}
void gemm_tn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  detail::gemm_tn(m, n, k, a, b, c, [](auto... xs) { return axpy_f64(xs...); });
}
void gemm_tn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  detail::gemm_tn(m, n, k, a, b, c, [](auto... xs) { return axpy_f32(xs...); });
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2,   &dot_f64,     &dot_f32,     &axpy_f64,
                                 &axpy_f32,   &sumsq_f64,   &gemm_nn_f64, &gemm_nn_f32,
                                 &gemm_nt_f64, &gemm_nt_f32, &gemm_tn_f64, &gemm_tn_f32};
  return table;
}

}  // namespace compass::simd
