#include "vqg/optim.hpp"

#include <cmath>

namespace vqg {

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw Error("Adam: learning rate must be positive");
  moments_.reserve(params_.size());
  for (const auto& p : params_) {
    moments_.push_back({std::vector<double>(p.tensor.numel(), 0.0),
                        std::vector<double>(p.tensor.numel(), 0.0)});
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw Error("Adam: parameter '" + p.name + "' has no gradient");
  }
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto w = t.data_mut();
    const auto g = t.grad();
    auto& m = moments_[i].first;
    auto& v = moments_[i].second;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::restore(std::int64_t step_count, std::vector<Moments> moments) {
  if (moments.size() != params_.size()) throw Error("Adam: moment count mismatch on restore");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (moments[i].first.size() != params_[i].tensor.numel() ||
        moments[i].second.size() != params_[i].tensor.numel()) {
      throw Error("Adam: moment shape mismatch for '" + params_[i].name + "'");
    }
  }
  step_count_ = step_count;
  moments_ = std::move(moments);
}

double grad_norm(const std::vector<NamedTensor>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.grad_mut()) g *= k;
    }
  }
  return norm;
}

}  // namespace vqg
