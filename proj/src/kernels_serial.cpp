#include <cassert>
#include <cmath>
#include <vector>

#include "kdiffe/kernels.hpp"

namespace kdiffe {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace kernels::serial {

void spmm(const CsrMatrix& a, const Matrix& x, Matrix& y) {
  assert(a.cols == x.rows());
  const std::size_t d = x.cols();
  y = Matrix(a.rows, d);
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto out = y.row(r);
    for (std::size_t k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
      const double w = a.values[k];
      auto in = x.row(a.col_idx[k]);
      for (std::size_t c = 0; c < d; ++c) out[c] += w * in[c];
    }
  }
}

void gram(const Matrix& left, const Matrix& right, Matrix& out) {
  assert(left.cols() == right.cols());
  out = Matrix(left.rows(), right.rows());
  for (std::size_t i = 0; i < left.rows(); ++i)
    for (std::size_t j = 0; j < right.rows(); ++j) out(i, j) = dot(left.row(i), right.row(j));
}

void cosine(const Matrix& left, const Matrix& right, Matrix& out) {
  assert(left.cols() == right.cols());
  std::vector<double> ln(left.rows()), rn(right.rows());
  for (std::size_t i = 0; i < left.rows(); ++i) ln[i] = l2_norm(left.row(i));
  for (std::size_t j = 0; j < right.rows(); ++j) rn[j] = l2_norm(right.row(j));
  out = Matrix(left.rows(), right.rows());
  for (std::size_t i = 0; i < left.rows(); ++i)
    for (std::size_t j = 0; j < right.rows(); ++j) {
      const double denom = ln[i] * rn[j];
      out(i, j) = denom > 0.0 ? dot(left.row(i), right.row(j)) / denom : 0.0;
    }
}

}  // namespace kernels::serial
}  // namespace kdiffe
