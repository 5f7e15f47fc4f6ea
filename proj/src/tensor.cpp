#include "vqg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vqg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

const detail::Node& Tensor::n() const {
  if (!node_) throw Error("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return n().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return n().data.size(); }

std::span<const double> Tensor::data() const { return n().data; }

std::span<double> Tensor::data_mut() {
  n();
  if (!node_->is_leaf) throw Error("data_mut() called on a non-leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return n().data[0];
}

bool Tensor::requires_grad() const { return n().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  n();
  if (!node_->is_leaf) throw Error("requires_grad can only be changed on leaves");
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return n().is_leaf; }

bool Tensor::has_grad() const { return !n().grad.empty(); }

std::span<const double> Tensor::grad() const { return n().grad; }

std::span<double> Tensor::grad_mut() {
  n();
  return node_->grad;
}

void Tensor::zero_grad() {
  n();
  node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  n();
  node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), n().data, false); }

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<double> data,
                           std::initializer_list<const Tensor*> inputs,
                           std::function<void(detail::Node&)> backward) {
  std::vector<Tensor> in;
  in.reserve(inputs.size());
  for (const Tensor* t : inputs) in.push_back(*t);
  return make_result(op, std::move(shape), std::move(data), in, std::move(backward));
}

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<double> data,
                           const std::vector<Tensor>& inputs,
                           std::function<void(detail::Node&)> backward) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " +
                         std::to_string(i));
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (g_grad_enabled && backward) {
    for (const Tensor& t : inputs) track = track || (t.defined() && t.requires_grad());
  }
  if (track) {
    node->is_leaf = false;
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a scalar root, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Each sweep accumulates into fresh buffers; leaf totals are added to the
  // existing leaf gradients once at the end, so repeating a sweep adds the
  // bitwise-identical total again.
  std::vector<std::vector<double>> previous(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    detail::Node* node = order[i];
    if (node->is_leaf) previous[i] = std::move(node->grad);
    node->grad.assign(node->data.size(), 0.0);
  }
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    detail::Node* node = order[i];
    if (!node->is_leaf || previous[i].empty()) continue;
    for (std::size_t j = 0; j < node->grad.size(); ++j) node->grad[j] = previous[i][j] + node->grad[j];
  }
}

}  // namespace vqg
