#include "compass/simd.hpp"
#include "gemm_impl.hpp"

namespace compass::simd {
namespace {

template <class T>
T dot_ref(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
void axpy_ref(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sumsq_ref(const double* a, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
  return s;
}

template <class T>
void gemm_nn_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_nn(m, n, k, a, b, c, [](auto... xs) { return axpy_ref<T>(xs...); });
}

template <class T>
void gemm_nt_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_nt(m, n, k, a, b, c, [](auto... xs) { return dot_ref<T>(xs...); });
}

template <class T>
void gemm_tn_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_tn(m, n, k, a, b, c, [](auto... xs) { return axpy_ref<T>(xs...); });
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar,          &dot_ref<double>,     &dot_ref<float>,
                                 &axpy_ref<double>,    &axpy_ref<float>,     &sumsq_ref,
                                 &gemm_nn_ref<double>, &gemm_nn_ref<float>,  &gemm_nt_ref<double>,
                                 &gemm_nt_ref<float>,  &gemm_tn_ref<double>, &gemm_tn_ref<float>};
  return table;
}

}  // namespace compass::simd
