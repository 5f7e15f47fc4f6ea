#include "vqg/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace vqg {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           double h) {
  std::vector<bool> restore_flag;
  for (Tensor& x : inputs) {
    if (!x.is_leaf()) throw Error("grad_check: inputs must be leaf tensors");
    restore_flag.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }

  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const Tensor& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].data_mut();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + h;
      const double plus = f().item();
      values[j] = saved - h;
      const double minus = f().item();
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i][j], numeric);
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = j;
        report.worst_analytic = analytic[i][j];
        report.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].set_requires_grad(restore_flag[i]);
    if (!restore_flag[i]) inputs[i].clear_grad();
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  return grad_check([&] { return f(x); }, {x}, h).max_rel_error;
}

}  // namespace vqg
