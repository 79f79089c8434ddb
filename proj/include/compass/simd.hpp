#pragma once

// Runtime-dispatched inner-loop kernels. Every kernel has a portable scalar
// reference; an AVX2+FMA variant is compiled into its own translation unit and
// selected at startup when the CPU supports it. Set COMPASS_SIMD=scalar to
// force the reference path.

#include <cstddef>
#include <string_view>

namespace compass::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  /// y += alpha * x
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  /// sum of squares
  double (*sumsq_f64)(const double* a, std::size_t n);
  /// Row-major C(m x n) += A * B with A m x k, B k x n.
  void (*gemm_nn_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  void (*gemm_nn_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
  /// C += A * B^T with A m x k, B n x k.
  void (*gemm_nt_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  void (*gemm_nt_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
  /// C += A^T * B with A k x m, B k x n.
  void (*gemm_tn_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  void (*gemm_tn_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
};

const KernelTable& scalar_kernels();
/// nullptr when the AVX2 variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();

const KernelTable& active();
Isa active_isa();
/// Force a kernel set (tests and benchmarks). Throws ConfigError if the
/// requested set is unavailable.
void select(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot_f64(a, b, n);
}
inline float dot(const float* a, const float* b, std::size_t n) {
  return active().dot_f32(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy_f64(alpha, x, y, n);
}
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  active().axpy_f32(alpha, x, y, n);
}
inline double sumsq(const double* a, std::size_t n) { return active().sumsq_f64(a, n); }

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_nn_f64(m, n, k, a, b, c);
}
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  active().gemm_nn_f32(m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_nt_f64(m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  active().gemm_nt_f32(m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_tn_f64(m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  active().gemm_tn_f32(m, n, k, a, b, c);
}

}  // namespace compass::simd
