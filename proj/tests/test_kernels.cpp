#include <doctest.h>

#include "kdiffe/kernels.hpp"
#include "test_util.hpp"

using namespace kdiffe;

namespace {

CsrMatrix random_csr(std::size_t rows, std::size_t cols, double density, std::mt19937_64& rng, Matrix* dense) {
  std::bernoulli_distribution keep(density);
  std::normal_distribution<double> val;
  CsrMatrix a;
  a.rows = rows;
  a.cols = cols;
  *dense = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!keep(rng)) continue;
      const double v = val(rng);
      a.col_idx.push_back(static_cast<std::uint32_t>(c));
      a.values.push_back(v);
      (*dense)(r, c) = v;
    }
    a.row_ptr.push_back(a.col_idx.size());
  }
  return a;
}

}  // namespace

TEST_CASE("spmm matches a dense triple loop") {
  std::mt19937_64 rng(1);
  Matrix dense;
  const auto a = random_csr(17, 11, 0.3, rng, &dense);
  const auto x = testing::random_matrix(11, 5, rng);
  Matrix y;
  kernels::serial::spmm(a, x, y);
  REQUIRE(y.rows() == 17);
  for (std::size_t i = 0; i < 17; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 11; ++j) ref += dense(i, j) * x(j, k);
      CHECK(y(i, k) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  std::mt19937_64 rng(2);
  Matrix dense;
  const auto a = random_csr(40, 30, 0.2, rng, &dense);
  const auto x = testing::random_matrix(30, 8, rng);
  Matrix ys, yp;
  kernels::serial::spmm(a, x, ys);
  kernels::parallel::spmm(a, x, yp);
  CHECK(ys == yp);

  const auto l = testing::random_matrix(25, 6, rng);
  const auto r = testing::random_matrix(19, 6, rng);
  Matrix gs, gp, cs, cp;
  kernels::serial::gram(l, r, gs);
  kernels::parallel::gram(l, r, gp);
  CHECK(gs == gp);
  kernels::serial::cosine(l, r, cs);
  kernels::parallel::cosine(l, r, cp);
  CHECK(cs == cp);
}

TEST_CASE("cosine kernel: scalar oracle and zero-norm guard") {
  std::mt19937_64 rng(3);
  auto l = testing::random_matrix(4, 3, rng);
  const auto r = testing::random_matrix(5, 3, rng);
  for (auto& v : l.row(2)) v = 0.0;
  Matrix c;
  kernels::serial::cosine(l, r, c);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double d = 0, nl = 0, nr = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        d += l(i, k) * r(j, k);
        nl += l(i, k) * l(i, k);
        nr += r(j, k) * r(j, k);
      }
      const double ref = (nl == 0 || nr == 0) ? 0.0 : d / std::sqrt(nl * nr);
      CHECK(c(i, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  for (std::size_t j = 0; j < 5; ++j) CHECK(c(2, j) == 0.0);
}

TEST_CASE("derive_seed separates streams deterministically") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("csr transpose round trip") {
  std::mt19937_64 rng(4);
  Matrix dense;
  const auto a = random_csr(9, 13, 0.4, rng, &dense);
  const auto t = a.transpose();
  CHECK(t.rows == 13);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 13; ++j) CHECK(t.at(j, i) == dense(i, j));
  CHECK(t.transpose() == a);
}
