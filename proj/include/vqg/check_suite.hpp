#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vqg {

struct OpCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;  // gradient entries compared, over all seeds
  bool passed(double tolerance = 1e-4) const { return max_rel_error <= tolerance; }
};

/// Finite-difference verification of every differentiable op over `seeds`
/// random draws, then of the whole tiny model (1 layer, 1 head, d = 8,
/// V = 11, B = 2) for each variant.
std::vector<OpCheck> run_check_suite(std::size_t seeds = 10);

}  // namespace vqg
