#include "kdiffe/optim.hpp"

#include <cassert>
#include <cmath>

namespace kdiffe {

void Adam::update(std::size_t slot, Matrix& param, const Matrix& grad) {
  assert(slot < slots_.size());
  assert(param.rows() == grad.rows() && param.cols() == grad.cols());
  auto& s = slots_[slot];
  if (s.m.rows() != param.rows() || s.m.cols() != param.cols()) {
    s.m = Matrix(param.rows(), param.cols());
    s.v = Matrix(param.rows(), param.cols());
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto p = param.values();
  auto g = grad.values();
  auto m = s.m.values();
  auto v = s.v.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace kdiffe
