#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace kdiffe {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  double squared_norm() const;
  bool all_finite() const;

  /// out += alpha * other, shapes must match.
  void add_scaled(const Matrix& other, double alpha);

  static Matrix normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Compressed sparse row matrix. Column indices are sorted within a row.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const noexcept { return col_idx.size(); }
  std::span<const std::uint32_t> row_cols(std::size_t r) const {
    return {col_idx.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  /// Stored value at (r, c) or 0 when absent.
  double at(std::size_t r, std::size_t c) const;
  CsrMatrix transpose() const;
  bool same_structure(const CsrMatrix& other) const;

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;
};

}  // namespace kdiffe
