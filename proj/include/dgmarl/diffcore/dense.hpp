#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dgmarl/errors.hpp"

namespace dgmarl {

using Real = double;

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t dim, Real fill = 0.0) : values_(dim, fill) {}
  explicit DenseVector(std::vector<Real> values) : values_(std::move(values)) {}
  DenseVector(std::initializer_list<Real> init) : values_(init) {}

  std::size_t dim() const noexcept { return values_.size(); }
  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }

  std::span<Real> span() noexcept { return values_; }
  std::span<const Real> span() const noexcept { return values_; }
  const std::vector<Real>& values() const noexcept { return values_; }
  std::vector<Real>& values() noexcept { return values_; }

  bool all_finite() const noexcept {
    for (Real v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

 private:
  std::vector<Real> values_;
};

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, Real fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<Real> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw ConfigError("DenseMatrix: " + std::to_string(values_.size()) + " values for shape " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<Real>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    values_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ConfigError("DenseMatrix: ragged initializer");
      values_.insert(values_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix row(const DenseVector& v) { return DenseMatrix(1, v.dim(), v.values()); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }

  Real& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<Real> row_span(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const Real> row_span(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  DenseVector row_vector(std::size_t r) const {
    auto s = row_span(r);
    return DenseVector(std::vector<Real>(s.begin(), s.end()));
  }

  Real* data() noexcept { return values_.data(); }
  const Real* data() const noexcept { return values_.data(); }
  std::span<Real> span() noexcept { return values_; }
  std::span<const Real> span() const noexcept { return values_; }
  std::vector<Real>& values() noexcept { return values_; }
  const std::vector<Real>& values() const noexcept { return values_; }

  void fill(Real v) {
    for (auto& x : values_) x = v;
  }

  bool all_finite() const noexcept {
    for (Real v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> values_;
};

/// A named trainable tensor with its accumulated gradient.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, std::size_t rows, std::size_t cols)
      : name_(std::move(name)), value_(rows, cols), grad_(rows, cols) {}

  const std::string& name() const noexcept { return name_; }
  DenseMatrix& value() noexcept { return value_; }
  const DenseMatrix& value() const noexcept { return value_; }
  DenseMatrix& grad() noexcept { return grad_; }
  const DenseMatrix& grad() const noexcept { return grad_; }
  std::size_t size() const noexcept { return value_.size(); }
  void zero_grad() { grad_.fill(0.0); }

 private:
  std::string name_;
  DenseMatrix value_;
  DenseMatrix grad_;
};

}  // namespace dgmarl
