// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qtsplus/error.hpp"

namespace qtsplus {

// Dense row-major matrix. Used for visual tokens (M x d), query tokens
// (L x d), weights and every intermediate of the differentiable graph.
template <class T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorKind::shape, "matrix data length " + std::to_string(data_.size()) + " != " +
                                 std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) fail(ErrorKind::shape, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }
  static BasicMatrix row_vector(std::span<const T> values) {
    return BasicMatrix(1, values.size(), std::vector<T>(values.begin(), values.end()));
  }
  static BasicMatrix column_vector(std::span<const T> values) {
    return BasicMatrix(values.size(), 1, std::vector<T>(values.begin(), values.end()));
  }
  static BasicMatrix scalar(T v) { return BasicMatrix(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  bool same_shape(const BasicMatrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using FeatureMatrix = Matrix;

template <class T>
void require_same_shape(const BasicMatrix<T>& a, const BasicMatrix<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::shape, std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

template <class T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::shape, "matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* orow = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      const T* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a * b^T without materialising the transpose.
template <class T>
BasicMatrix<T> matmul_transposed(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorKind::shape, "matmul_transposed: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  BasicMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* arow = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const T* brow = b.row(j).data();
      T acc{0};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <class T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class T>
BasicMatrix<T>& operator+=(BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <class T>
BasicMatrix<T> operator+(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  a += b;
  return a;
}

template <class T>
BasicMatrix<T> operator-(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  require_same_shape(a, b, "sub");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

template <class T>
BasicMatrix<T> operator*(BasicMatrix<T> a, T s) {
  for (auto& v : a.data()) v *= s;
  return a;
}

template <class T>
BasicMatrix<T> gather_rows(const BasicMatrix<T>& a, std::span<const std::size_t> idx) {
  BasicMatrix<T> out(idx.size(), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= a.rows()) fail(ErrorKind::shape, "gather_rows: index out of range");
    std::copy(a.row(idx[k]).begin(), a.row(idx[k]).end(), out.row(k).begin());
  }
  return out;
}

template <class T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace qtsplus
