#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vqg/errors.hpp"

namespace vqg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "absent"
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the optimizer update parameters owned by a model. Every op result
/// records its inputs when gradients are enabled and any input requires grad;
/// the resulting DAG is the compute graph walked by backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable storage; only valid on leaves (parameters, inputs).
  std::span<double> data_mut();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  /// Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Same values, no graph history, never requires grad.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op output. `backward` may be empty for ops without gradients.
  static Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            std::initializer_list<const Tensor*> inputs,
                            std::function<void(detail::Node&)> backward);
  static Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                            const std::vector<Tensor>& inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& n() const;

  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph construction for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

}  // namespace vqg
