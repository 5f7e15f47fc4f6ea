#pragma once

#include <cstdint>
#include <vector>

#include "vqg/tensor.hpp"

namespace vqg {

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moment estimation with bias correction and a constant learning rate.
class Adam {
 public:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  Adam(std::vector<NamedTensor> params, AdamConfig config);

  /// Applies one update. Every registered parameter must carry a gradient.
  void step();
  /// Zero-fills every parameter gradient (allocating buffers where absent).
  void zero_grad();

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  const std::vector<Moments>& moments() const { return moments_; }

  /// Restores state saved from an optimizer over the same parameter list.
  void restore(std::int64_t step_count, std::vector<Moments> moments);

 private:
  std::vector<NamedTensor> params_;
  AdamConfig config_;
  std::vector<Moments> moments_;
  std::int64_t step_count_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const std::vector<NamedTensor>& params);
/// Rescales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

}  // namespace vqg
