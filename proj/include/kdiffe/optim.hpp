#pragma once

#include <cstdint>
#include <vector>

#include "kdiffe/matrix.hpp"

namespace kdiffe {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameter slots. Call begin_step() once per
/// optimizer step, then update() for each slot.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, std::size_t num_slots) : cfg_(cfg), slots_(num_slots) {}

  void begin_step() { ++t_; }
  void update(std::size_t slot, Matrix& param, const Matrix& grad);

  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  struct Slot {
    Matrix m;
    Matrix v;
  };
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace kdiffe
