#pragma once

#include <functional>
#include <vector>

#include "vqg/tensor.hpp"

namespace vqg {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
double relative_error(double analytic, double numeric);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;       // number of scalar coordinates compared
  std::size_t worst_input = 0;   // which input holds the worst coordinate
  std::size_t worst_index = 0;   // flat index inside that input
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(x+h) - f(x-h)) / 2h for every element of every input.
/// Inputs must be leaves; their gradients are overwritten. `f` must be
/// deterministic and must read the inputs' current values on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           double h = 1e-5);

/// Single-input form: f(x) must be scalar. Returns the max relative error.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

}  // namespace vqg
