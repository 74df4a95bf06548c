// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fscil/error.hpp"

namespace fscil {

/// Dense row-major matrix of doubles (rank <= 2) with an optional gradient
/// accumulator of identical shape.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged initializer for tensor");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
  }

  static Tensor row_vector(std::span<const double> values) {
    return Tensor(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  static Tensor column_vector(std::span<const double> values) {
    return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool requires_grad() const noexcept { return requires_grad_; }

  void set_requires_grad(bool flag) {
    requires_grad_ = flag;
    if (flag) {
      grad_.assign(data_.size(), 0.0);
    } else {
      grad_.clear();
    }
  }

  /// Empty unless requires_grad() is set.
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); }) &&
           std::all_of(grad_.begin(), grad_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Returns a copy holding only the values (no gradient state).
  Tensor detached() const { return Tensor(rows_, cols_, data_); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

/// Exact equality of shape and value bits.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return same_shape(a, b) &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}

inline std::string shape_string(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Plain (non-differentiable) cosine of two vectors. Throws on zero norm.
inline double cosine_value(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

/// Stacks the given rows of `src` into a new tensor.
inline Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
  Tensor out(indices.size(), src.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = src.row(indices[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

/// Vertical concatenation; both operands must have the same column count
/// unless one of them is empty.
inline Tensor vconcat(const Tensor& top, const Tensor& bottom) {
  if (top.empty()) return bottom.detached();
  if (bottom.empty()) return top.detached();
  if (top.cols() != bottom.cols()) {
    throw DimensionError("vconcat of " + shape_string(top) + " and " + shape_string(bottom));
  }
  std::vector<double> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Tensor(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

/// First `count` rows of `src`.
inline Tensor head_rows(const Tensor& src, std::size_t count) {
  if (count > src.rows()) throw DimensionError("head_rows beyond tensor extent");
  return Tensor(count, src.cols(),
                std::vector<double>(src.data().begin(), src.data().begin() + count * src.cols()));
}

}  // namespace fscil
