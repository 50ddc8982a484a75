#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference in
// kernels::serial and an OpenMP version in kernels::parallel. Both compute
// each output element with the same summation order, so results agree
// bit-for-bit; the serial versions are what the tests compare against.

#include <cstdint>
#include <span>

#include "kdiffe/matrix.hpp"

namespace kdiffe {

enum class Exec { kSerial, kParallel };

/// Stream seed for an independent RNG keyed by (seed, index). SplitMix64 mix.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Sets the OpenMP thread count; 0 keeps the runtime default.
void set_num_threads(int threads);
int max_threads();

namespace kernels {

namespace serial {
/// y = a * x, where a is rows x cols sparse and x is cols x d.
void spmm(const CsrMatrix& a, const Matrix& x, Matrix& y);
/// out(i, j) = <left row i, right row j>.
void gram(const Matrix& left, const Matrix& right, Matrix& out);
/// out(i, j) = cosine(left row i, right row j); zero-norm rows give 0.
void cosine(const Matrix& left, const Matrix& right, Matrix& out);
}  // namespace serial

namespace parallel {
void spmm(const CsrMatrix& a, const Matrix& x, Matrix& y);
void gram(const Matrix& left, const Matrix& right, Matrix& out);
void cosine(const Matrix& left, const Matrix& right, Matrix& out);
}  // namespace parallel

inline void spmm(const CsrMatrix& a, const Matrix& x, Matrix& y, Exec exec) {
  exec == Exec::kParallel ? parallel::spmm(a, x, y) : serial::spmm(a, x, y);
}
inline void gram(const Matrix& l, const Matrix& r, Matrix& out, Exec exec) {
  exec == Exec::kParallel ? parallel::gram(l, r, out) : serial::gram(l, r, out);
}
inline void cosine(const Matrix& l, const Matrix& r, Matrix& out, Exec exec) {
  exec == Exec::kParallel ? parallel::cosine(l, r, out) : serial::cosine(l, r, out);
}

}  // namespace kernels
}  // namespace kdiffe
