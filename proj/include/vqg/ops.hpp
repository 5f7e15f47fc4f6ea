#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqg/tensor.hpp"

namespace vqg {

// Linear algebra -------------------------------------------------------------

/// [..., M, K] x [K, N] -> [..., M, N]. Leading axes of `a` are batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over a shared leading axis: [G, M, K] x [G, K, N], or
/// [G, M, K] x [G, N, K]^T when `transpose_b` is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Adds a vector along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);

// Reductions -------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Shape ------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// [B, T, H*Dh] -> [B*H, T, Dh]
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B*H, T, Dh] -> [B, T, H*Dh]
Tensor merge_heads(const Tensor& x, std::size_t heads);

// Normalization and attention -------------------------------------------------

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Which key positions each query may attend to, per batch row.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;  // [batch, queries, keys]

  bool at(std::size_t b, std::size_t q, std::size_t k) const {
    return allowed[(b * queries + q) * keys + k] != 0;
  }

  /// Every query sees exactly the keys flagged in `key_mask` ([batch, keys]).
  static AttentionMask from_keys(std::span<const std::uint8_t> key_mask, std::size_t batch,
                                 std::size_t queries, std::size_t keys);
  /// Key mask combined with a causal constraint (key index <= query index).
  static AttentionMask causal(std::span<const std::uint8_t> key_mask, std::size_t batch,
                              std::size_t length);
};

/// Softmax over the last axis of scores [B*heads, Tq, Tk]. Disallowed entries
/// get weight exactly 0; a row with no allowed key is all zeros.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask, std::size_t heads);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

enum class NormMode { Train, Eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t width = 0)
      : running_mean(width, 0.0), running_var(width, 1.0) {}
};

/// Batch normalization over [B, D]. Train mode normalizes with the batch's
/// population statistics and folds them into `state`; eval mode uses `state`.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     BatchNormState& state, NormMode mode, double eps = 1e-5);

// Losses -----------------------------------------------------------------------

/// Mean token NLL over logits [..., V]; positions whose target equals
/// `ignore_id` contribute to neither the loss nor the gradient.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id);
/// Mean squared difference over all elements.
Tensor mse_l2(const Tensor& a, const Tensor& b);

// Lookup and pooling -----------------------------------------------------------

/// Rows of `table` [V, D] gathered by `ids`; result shape is `lead` + [D].
Tensor embedding(const Tensor& table, std::span<const int> ids, Shape lead);
/// Mean over positions of x [B, T, D] where mask [B, T] is set.
Tensor masked_mean_pool(const Tensor& x, std::span<const std::uint8_t> mask);

/// Stride-1 2D convolution: x [B, C, H, W], w [O, C, K, K], b [O], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad);
/// Non-overlapping average pooling with window `k` (H and W divisible by k).
Tensor avg_pool2d(const Tensor& x, std::size_t k);

}  // namespace vqg
