#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ensi/core/error.hpp"

namespace ensi {

/// Dense row-major real matrix. Plaintext-side only.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  template <class Rng>
  static Matrix random(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                       double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (auto& v : m.data_) v = dist(rng);
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// d x m weight matrix over {-1, 0, 1}.
class TernaryMatrix {
 public:
  TernaryMatrix() = default;
  TernaryMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}
  TernaryMatrix(std::size_t rows, std::size_t cols, std::vector<std::int8_t> entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_) throw DimensionMismatch("ternary matrix: entry count does not match dims");
    for (auto v : data_)
      if (v < -1 || v > 1) throw InvalidParams("ternary matrix: entry outside {-1,0,1}");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::int8_t operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  void set(std::size_t i, std::size_t j, int v) {
    if (v < -1 || v > 1) throw InvalidParams("ternary matrix: entry outside {-1,0,1}");
    data_[i * cols_ + j] = static_cast<std::int8_t>(v);
  }

  std::span<const std::int8_t> data() const noexcept { return data_; }

  template <class Rng>
  static TernaryMatrix random(std::size_t rows, std::size_t cols, Rng& rng) {
    std::uniform_int_distribution<int> dist(-1, 1);
    TernaryMatrix m(rows, cols);
    for (auto& v : m.data_) v = static_cast<std::int8_t>(dist(rng));
    return m;
  }

  friend bool operator==(const TernaryMatrix&, const TernaryMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::int8_t> data_;
};

}  // namespace ensi
