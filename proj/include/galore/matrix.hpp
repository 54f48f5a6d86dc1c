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

#include "galore/errors.hpp"

namespace galore {

/// Dense row-major matrix of doubles.
///
/// Constructors that take caller-supplied values reject NaN/Inf. Element
/// access is unchecked; use the free functions below for shape-checked
/// arithmetic.
class Matrix {
public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
    require_finite();
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto &r : rows) {
      if (r.size() != cols_) {
        throw DimensionError("ragged initializer list");
      }
      data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite();
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, i) = 1.0;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double &operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
      out[i] = (*this)(i, j);
    }
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Matrix &, const Matrix &) = default;

private:
  void require_finite() const {
    if (!all_finite()) {
      throw NumericError("matrix input contains non-finite entries");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool same_shape(const Matrix &a, const Matrix &b) noexcept {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

inline void require_same_shape(const Matrix &a, const Matrix &b, const char *what) {
  if (!same_shape(a, b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_str() + " vs " + b.shape_str());
  }
}

/// Product with a fixed i-k-j loop order, so results are bit-reproducible.
inline Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_str() + " times " + b.shape_str());
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a(i, k);
      auto bk = b.row(k);
      for (std::size_t j = 0; j < ci.size(); ++j) {
        ci[j] += aik * bk[j];
      }
    }
  }
  return c;
}

inline Matrix transpose(const Matrix &a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      t(j, i) = a(i, j);
    }
  }
  return t;
}

inline Matrix operator+(const Matrix &a, const Matrix &b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) {
    cd[i] += bd[i];
  }
  return c;
}

inline Matrix operator-(const Matrix &a, const Matrix &b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) {
    cd[i] -= bd[i];
  }
  return c;
}

inline Matrix operator*(double s, const Matrix &a) {
  Matrix c = a;
  for (double &x : c.data()) {
    x = s * x;
  }
  return c;
}

inline double frobenius_norm(const Matrix &a) {
  double s = 0.0;
  for (double x : a.data()) {
    s += x * x;
  }
  return std::sqrt(s);
}

inline double max_abs(const Matrix &a) {
  double m = 0.0;
  for (double x : a.data()) {
    m = std::max(m, std::abs(x));
  }
  return m;
}

/// First `k` columns of `a`.
inline Matrix leading_columns(const Matrix &a, std::size_t k) {
  if (k > a.cols()) {
    throw DimensionError("leading_columns: k exceeds column count");
  }
  Matrix out(a.rows(), k);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy_n(a.row(i).begin(), k, out.row(i).begin());
  }
  return out;
}

/// ||aᵀa - I||_F.
inline double orthonormality_residual(const Matrix &a) {
  const Matrix gram = matmul(transpose(a), a);
  return frobenius_norm(gram - Matrix::identity(a.cols()));
}

} // namespace galore
