#include <cassert>
#include <cmath>
#include <vector>

#include "kdiffe/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kdiffe {

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace kernels::parallel {

void spmm(const CsrMatrix& a, const Matrix& x, Matrix& y) {
  assert(a.cols == x.rows());
  const std::size_t d = x.cols();
  y = Matrix(a.rows, d);
  const auto rows = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t r = 0; r < rows; ++r) {
    auto out = y.row(static_cast<std::size_t>(r));
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
  const auto n = static_cast<std::int64_t>(left.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < right.rows(); ++j)
      out(static_cast<std::size_t>(i), j) = dot(left.row(static_cast<std::size_t>(i)), right.row(j));
}

void cosine(const Matrix& left, const Matrix& right, Matrix& out) {
  assert(left.cols() == right.cols());
  std::vector<double> ln(left.rows()), rn(right.rows());
  for (std::size_t i = 0; i < left.rows(); ++i) ln[i] = l2_norm(left.row(i));
  for (std::size_t j = 0; j < right.rows(); ++j) rn[j] = l2_norm(right.row(j));
  out = Matrix(left.rows(), right.rows());
  const auto n = static_cast<std::int64_t>(left.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < right.rows(); ++j) {
      const double denom = ln[ii] * rn[j];
      out(ii, j) = denom > 0.0 ? dot(left.row(ii), right.row(j)) / denom : 0.0;
    }
  }
}

}  // namespace kernels::parallel
}  // namespace kdiffe
