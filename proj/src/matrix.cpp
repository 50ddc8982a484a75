#include "kdiffe/matrix.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace kdiffe {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Matrix::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::add_scaled(const Matrix& other, double alpha) {
  assert(rows_ == other.rows_ && cols_ == other.cols_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
}

Matrix Matrix::normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : m.data_) v = dist(rng);
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double CsrMatrix::at(std::size_t r, std::size_t c) const {
  auto cols_in_row = row_cols(r);
  auto it = std::lower_bound(cols_in_row.begin(), cols_in_row.end(), static_cast<std::uint32_t>(c));
  if (it == cols_in_row.end() || *it != c) return 0.0;
  return values[row_ptr[r] + static_cast<std::size_t>(it - cols_in_row.begin())];
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (auto c : col_idx) ++t.row_ptr[c + 1];
  for (std::size_t i = 0; i < cols; ++i) t.row_ptr[i + 1] += t.row_ptr[i];
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  // Rows visited in ascending order keep the transposed columns sorted.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      auto dst = cursor[col_idx[k]]++;
      t.col_idx[dst] = static_cast<std::uint32_t>(r);
      t.values[dst] = values[k];
    }
  }
  return t;
}

bool CsrMatrix::same_structure(const CsrMatrix& other) const {
  return rows == other.rows && cols == other.cols && row_ptr == other.row_ptr &&
         col_idx == other.col_idx;
}

}  // namespace kdiffe
