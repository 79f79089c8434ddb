#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

#include "compass/simd.hpp"

namespace compass {

/// Dense row-major matrix. Rows are contiguous so row-wise kernels can hand
/// them straight to the SIMD layer.
template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const T* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  std::span<T> row(int r) { return {row_ptr(r), static_cast<std::size_t>(cols_)}; }
  std::span<const T> row(int r) const { return {row_ptr(r), static_cast<std::size_t>(cols_)}; }

  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  template <class U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// C += A * B
template <class T>
void gemm_nn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols());
  simd::gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data());
}

/// C += A * B^T
template <class T>
void gemm_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows());
  simd::gemm_nt(a.rows(), b.rows(), a.cols(), a.data(), b.data(), c.data());
}

/// C += A^T * B
template <class T>
void gemm_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols());
  simd::gemm_tn(a.cols(), b.cols(), a.rows(), a.data(), b.data(), c.data());
}

}  // namespace compass
