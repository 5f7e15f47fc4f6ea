#include "vqg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vqg {

using detail::Node;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Helper for closures: gradient buffer of parent `i`, or nullptr when it
// does not take gradients.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

const std::vector<double>& parent_data(const Node& self, std::size_t i) {
  return self.parents[i]->data;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t K = b.dim(0), N = b.dim(1);
  const std::size_t R = a.numel() / K;
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> c(R * N, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = &c[r * N];
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[r * K + k];
      if (av == 0.0) continue;
      const double* brow = &B[k * N];
      for (std::size_t n = 0; n < N; ++n) crow[n] += av * brow[n];
    }
  }
  Shape out = a.shape();
  out.back() = N;
  return Tensor::make_result("matmul", std::move(out), std::move(c), {&a, &b},
                             [R, K, N](Node& self) {
                               const auto& A = parent_data(self, 0);
                               const auto& B = parent_data(self, 1);
                               const auto& G = self.grad;
                               if (auto* ga = parent_grad(self, 0)) {
                                 for (std::size_t r = 0; r < R; ++r) {
                                   const double* grow = &G[r * N];
                                   for (std::size_t k = 0; k < K; ++k) {
                                     const double* brow = &B[k * N];
                                     double acc = 0.0;
                                     for (std::size_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
                                     (*ga)[r * K + k] += acc;
                                   }
                                 }
                               }
                               if (auto* gb = parent_grad(self, 1)) {
                                 for (std::size_t r = 0; r < R; ++r) {
                                   const double* grow = &G[r * N];
                                   for (std::size_t k = 0; k < K; ++k) {
                                     const double av = A[r * K + k];
                                     if (av == 0.0) continue;
                                     double* gbrow = &(*gb)[k * N];
                                     for (std::size_t n = 0; n < N; ++n) gbrow[n] += av * grow[n];
                                   }
                                 }
                               }
                             });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError(std::string("bmm: cannot multiply ") + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  }
  const std::size_t Gs = a.dim(0), M = a.dim(1), K = a.dim(2);
  const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
  const auto A = a.data();
  const auto B = b.data();
  std::vector<double> c(Gs * M * N, 0.0);
  for (std::size_t g = 0; g < Gs; ++g) {
    const double* Ag = &A[g * M * K];
    const double* Bg = &B[g * K * N];
    double* Cg = &c[g * M * N];
    for (std::size_t m = 0; m < M; ++m) {
      if (transpose_b) {
        for (std::size_t n = 0; n < N; ++n) {
          double acc = 0.0;
          for (std::size_t k = 0; k < K; ++k) acc += Ag[m * K + k] * Bg[n * K + k];
          Cg[m * N + n] = acc;
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const double av = Ag[m * K + k];
          for (std::size_t n = 0; n < N; ++n) Cg[m * N + n] += av * Bg[k * N + n];
        }
      }
    }
  }
  return Tensor::make_result(
      "bmm", Shape{Gs, M, N}, std::move(c), {&a, &b}, [Gs, M, K, N, transpose_b](Node& self) {
        const auto& A = parent_data(self, 0);
        const auto& B = parent_data(self, 1);
        const auto& G = self.grad;
        auto* ga = parent_grad(self, 0);
        auto* gb = parent_grad(self, 1);
        for (std::size_t g = 0; g < Gs; ++g) {
          const double* Ag = &A[g * M * K];
          const double* Bg = &B[g * K * N];
          const double* Gg = &G[g * M * N];
          for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) {
              const double gv = Gg[m * N + n];
              if (gv == 0.0) continue;
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t bi = transpose_b ? n * K + k : k * N + n;
                if (ga) (*ga)[g * M * K + m * K + k] += gv * Bg[bi];
                if (gb) (*gb)[g * K * N + bi] += gv * Ag[m * K + k];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return Tensor::make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return Tensor::make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const auto& A = parent_data(self, 0);
    const auto& B = parent_data(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * B[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * A[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result("scale", x.shape(), std::move(out), {&x}, [factor](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const std::size_t D = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % D];
  return Tensor::make_result("add_bias", x.shape(), std::move(out), {&x, &bias}, [D](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % D] += self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result("relu", x.shape(), std::move(out), {&x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& X = parent_data(self, 0);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (X[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_result("sum", Shape{1}, {acc}, {&x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (double& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Shape

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result("reshape", std::move(shape), std::move(out), {&x}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit total = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    const auto src = p.data();
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(&src[o * len * total.inner], len * total.inner,
                  &out[(o * total.len + offset) * total.inner]);
    }
    offset += len;
  }
  return Tensor::make_result("concat", out_shape, std::move(out), parts,
                             [total, offsets](Node& self) {
                               for (std::size_t p = 0; p < self.parents.size(); ++p) {
                                 auto* g = parent_grad(self, p);
                                 if (!g) continue;
                                 const std::size_t len = g->size() / (total.outer * total.inner);
                                 for (std::size_t o = 0; o < total.outer; ++o) {
                                   const double* src =
                                       &self.grad[(o * total.len + offsets[p]) * total.inner];
                                   double* dst = &(*g)[o * len * total.inner];
                                   for (std::size_t i = 0; i < len * total.inner; ++i)
                                     dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_numel(out_shape));
  const auto src = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(&src[(o * sp.len + start) * sp.inner], length * sp.inner,
                &out[o * length * sp.inner]);
  }
  return Tensor::make_result("slice", std::move(out_shape), std::move(out), {&x},
                             [sp, start, length](Node& self) {
                               if (auto* g = parent_grad(self, 0)) {
                                 for (std::size_t o = 0; o < sp.outer; ++o) {
                                   const double* src = &self.grad[o * length * sp.inner];
                                   double* dst = &(*g)[(o * sp.len + start) * sp.inner];
                                   for (std::size_t i = 0; i < length * sp.inner; ++i)
                                     dst[i] += src[i];
                                 }
                               }
                             });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " not divisible into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2), Dh = D / heads;
  std::vector<double> out(x.numel());
  const auto src = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(&src[(b * T + t) * D + h * Dh], Dh, &out[((b * heads + h) * T + t) * Dh]);
  return Tensor::make_result("split_heads", Shape{B * heads, T, Dh}, std::move(out), {&x},
                             [B, T, D, Dh, heads](Node& self) {
                               if (auto* g = parent_grad(self, 0)) {
                                 for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t t = 0; t < T; ++t)
                                     for (std::size_t h = 0; h < heads; ++h)
                                       for (std::size_t j = 0; j < Dh; ++j)
                                         (*g)[(b * T + t) * D + h * Dh + j] +=
                                             self.grad[((b * heads + h) * T + t) * Dh + j];
                               }
                             });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: " + shape_str(x.shape()) + " not divisible into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t B = x.dim(0) / heads, T = x.dim(1), Dh = x.dim(2), D = Dh * heads;
  std::vector<double> out(x.numel());
  const auto src = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(&src[((b * heads + h) * T + t) * Dh], Dh, &out[(b * T + t) * D + h * Dh]);
  return Tensor::make_result("merge_heads", Shape{B, T, D}, std::move(out), {&x},
                             [B, T, D, Dh, heads](Node& self) {
                               if (auto* g = parent_grad(self, 0)) {
                                 for (std::size_t b = 0; b < B; ++b)
                                   for (std::size_t h = 0; h < heads; ++h)
                                     for (std::size_t t = 0; t < T; ++t)
                                       for (std::size_t j = 0; j < Dh; ++j)
                                         (*g)[((b * heads + h) * T + t) * Dh + j] +=
                                             self.grad[(b * T + t) * D + h * Dh + j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Softmax and attention

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto src = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.len * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, src[base + l * sp.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(src[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
    }
  }
  return Tensor::make_result("softmax", x.shape(), std::move(out), {&x}, [sp](Node& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.len * sp.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          dot += Y[i] * G[i];
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t i = base + l * sp.inner;
          (*g)[i] += Y[i] * (G[i] - dot);
        }
      }
    }
  });
}

AttentionMask AttentionMask::from_keys(std::span<const std::uint8_t> key_mask, std::size_t batch,
                                       std::size_t queries, std::size_t keys) {
  if (key_mask.size() != batch * keys) {
    throw DimensionError("attention mask: expected " + std::to_string(batch * keys) +
                         " key flags, got " + std::to_string(key_mask.size()));
  }
  AttentionMask m{batch, queries, keys, std::vector<std::uint8_t>(batch * queries * keys)};
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < queries; ++q)
      for (std::size_t k = 0; k < keys; ++k)
        m.allowed[(b * queries + q) * keys + k] = key_mask[b * keys + k] ? 1 : 0;
  return m;
}

AttentionMask AttentionMask::causal(std::span<const std::uint8_t> key_mask, std::size_t batch,
                                    std::size_t length) {
  AttentionMask m = from_keys(key_mask, batch, length, length);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < length; ++q)
      for (std::size_t k = q + 1; k < length; ++k) m.allowed[(b * length + q) * length + k] = 0;
  return m;
}

Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask, std::size_t heads) {
  if (scores.rank() != 3 || heads == 0 || scores.dim(0) != mask.batch * heads ||
      scores.dim(1) != mask.queries || scores.dim(2) != mask.keys) {
    throw DimensionError("masked_softmax: scores " + shape_str(scores.shape()) +
                         " do not match mask [" + std::to_string(mask.batch) + "x" +
                         std::to_string(heads) + " heads, " + std::to_string(mask.queries) + "x" +
                         std::to_string(mask.keys) + "]");
  }
  const std::size_t G = scores.dim(0), Tq = scores.dim(1), Tk = scores.dim(2);
  const auto src = scores.data();
  std::vector<double> out(scores.numel(), 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t b = g / heads;
    for (std::size_t q = 0; q < Tq; ++q) {
      const std::size_t row = (g * Tq + q) * Tk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < Tk; ++k)
        if (mask.at(b, q, k)) mx = std::max(mx, src[row + k]);
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (std::size_t k = 0; k < Tk; ++k) {
        if (!mask.at(b, q, k)) continue;
        out[row + k] = std::exp(src[row + k] - mx);
        z += out[row + k];
      }
      for (std::size_t k = 0; k < Tk; ++k) out[row + k] /= z;
    }
  }
  // Masked entries are exactly zero in Y, so the softmax Jacobian already
  // routes no gradient to them.
  return Tensor::make_result("masked_softmax", scores.shape(), std::move(out), {&scores},
                             [G, Tq, Tk](Node& self) {
                               auto* g = parent_grad(self, 0);
                               if (!g) return;
                               const auto& Y = self.data;
                               const auto& Gr = self.grad;
                               for (std::size_t r = 0; r < G * Tq; ++r) {
                                 const std::size_t row = r * Tk;
                                 double dot = 0.0;
                                 for (std::size_t k = 0; k < Tk; ++k) dot += Y[row + k] * Gr[row + k];
                                 for (std::size_t k = 0; k < Tk; ++k)
                                   (*g)[row + k] += Y[row + k] * (Gr[row + k] - dot);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t D = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != D || bias.dim(0) != D) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t R = x.numel() / D;
  const auto X = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = &X[r * D];
    double mu = 0.0;
    for (std::size_t d = 0; d < D; ++d) mu += row[d];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
    var /= static_cast<double>(D);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t d = 0; d < D; ++d) {
      xhat[r * D + d] = (row[d] - mu) * inv_std[r];
      out[r * D + d] = g[d] * xhat[r * D + d] + b[d];
    }
  }
  return Tensor::make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [R, D, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = parent_data(self, 1);
        const auto& G = self.grad;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t r = 0; r < R; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t d = 0; d < D; ++d) {
            const double dxh = G[r * D + d] * gv[d];
            m1 += dxh;
            m2 += dxh * xhat[r * D + d];
            if (gg) (*gg)[d] += G[r * D + d] * xhat[r * D + d];
            if (gb) (*gb)[d] += G[r * D + d];
          }
          if (!gx) continue;
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          for (std::size_t d = 0; d < D; ++d) {
            const double dxh = G[r * D + d] * gv[d];
            (*gx)[r * D + d] += inv_std[r] * (dxh - m1 - xhat[r * D + d] * m2);
          }
        }
      });
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     BatchNormState& state, NormMode mode, double eps) {
  if (x.rank() != 2) throw DimensionError("batch_norm_1d: expects [B, D], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), D = x.dim(1);
  if (gain.numel() != D || bias.numel() != D || state.running_mean.size() != D ||
      state.running_var.size() != D) {
    throw DimensionError("batch_norm_1d: parameter width does not match " + shape_str(x.shape()));
  }
  const auto X = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<double> out(x.numel());

  if (mode == NormMode::Eval) {
    std::vector<double> inv_std(D);
    for (std::size_t d = 0; d < D; ++d) inv_std[d] = 1.0 / std::sqrt(state.running_var[d] + eps);
    std::vector<double> xhat(x.numel());
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t d = 0; d < D; ++d) {
        xhat[r * D + d] = (X[r * D + d] - state.running_mean[d]) * inv_std[d];
        out[r * D + d] = g[d] * xhat[r * D + d] + b[d];
      }
    return Tensor::make_result(
        "batch_norm_1d", x.shape(), std::move(out), {&x, &gain, &bias},
        [B, D, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
          const auto& gv = parent_data(self, 1);
          auto* gx = parent_grad(self, 0);
          auto* gg = parent_grad(self, 1);
          auto* gb = parent_grad(self, 2);
          for (std::size_t r = 0; r < B; ++r)
            for (std::size_t d = 0; d < D; ++d) {
              const double gr = self.grad[r * D + d];
              if (gx) (*gx)[r * D + d] += gr * gv[d] * inv_std[d];
              if (gg) (*gg)[d] += gr * xhat[r * D + d];
              if (gb) (*gb)[d] += gr;
            }
        });
  }

  if (B < 2) {
    throw DimensionError("batch_norm_1d: train mode needs at least 2 rows, got batch of " +
                         std::to_string(B));
  }
  std::vector<double> mu(D, 0.0), var(D, 0.0), inv_std(D);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t d = 0; d < D; ++d) mu[d] += X[r * D + d];
  for (double& m : mu) m /= static_cast<double>(B);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t d = 0; d < D; ++d) var[d] += (X[r * D + d] - mu[d]) * (X[r * D + d] - mu[d]);
  for (double& v : var) v /= static_cast<double>(B);
  std::vector<double> xhat(x.numel());
  for (std::size_t d = 0; d < D; ++d) inv_std[d] = 1.0 / std::sqrt(var[d] + eps);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t d = 0; d < D; ++d) {
      xhat[r * D + d] = (X[r * D + d] - mu[d]) * inv_std[d];
      out[r * D + d] = g[d] * xhat[r * D + d] + b[d];
    }
  const double m = state.momentum;
  const double unbias = static_cast<double>(B) / static_cast<double>(B - 1);
  for (std::size_t d = 0; d < D; ++d) {
    state.running_mean[d] = (1.0 - m) * state.running_mean[d] + m * mu[d];
    state.running_var[d] = (1.0 - m) * state.running_var[d] + m * var[d] * unbias;
  }
  return Tensor::make_result(
      "batch_norm_1d", x.shape(), std::move(out), {&x, &gain, &bias},
      [B, D, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
        const auto& gv = parent_data(self, 1);
        const auto& G = self.grad;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t d = 0; d < D; ++d) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t r = 0; r < B; ++r) {
            const double gr = G[r * D + d];
            m1 += gr * gv[d];
            m2 += gr * gv[d] * xhat[r * D + d];
            if (gg) (*gg)[d] += gr * xhat[r * D + d];
            if (gb) (*gb)[d] += gr;
          }
          if (!gx) continue;
          m1 /= static_cast<double>(B);
          m2 /= static_cast<double>(B);
          for (std::size_t r = 0; r < B; ++r) {
            const double dxh = G[r * D + d] * gv[d];
            (*gx)[r * D + d] += inv_std[d] * (dxh - m1 - xhat[r * D + d] * m2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  const std::size_t V = logits.shape().back();
  const std::size_t R = logits.numel() / V;
  if (targets.size() != R) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  const auto L = logits.data();
  std::vector<double> probs(logits.numel(), 0.0);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < R; ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw DimensionError("cross_entropy: target id " + std::to_string(t) +
                           " out of range for vocabulary of " + std::to_string(V));
    }
    const double* row = &L[r * V];
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      probs[r * V + v] = std::exp(row[v] - mx);
      z += probs[r * V + v];
    }
    for (std::size_t v = 0; v < V; ++v) probs[r * V + v] /= z;
    total += (mx + std::log(z)) - row[t];
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every position is ignored; loss is empty");
  const double inv = 1.0 / static_cast<double>(count);
  return Tensor::make_result(
      "cross_entropy", Shape{1}, {total * inv}, {&logits},
      [R, V, inv, ignore_id, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        auto* g = parent_grad(self, 0);
        if (!g) return;
        const double scale_by = self.grad[0] * inv;
        for (std::size_t r = 0; r < R; ++r) {
          if (tgt[r] == ignore_id) continue;
          for (std::size_t v = 0; v < V; ++v) (*g)[r * V + v] += scale_by * probs[r * V + v];
          (*g)[r * V + static_cast<std::size_t>(tgt[r])] -= scale_by;
        }
      });
}

Tensor mse_l2(const Tensor& a, const Tensor& b) {
  require_same_shape("mse_l2", a, b);
  const auto A = a.data();
  const auto B = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += (A[i] - B[i]) * (A[i] - B[i]);
  const double n = static_cast<double>(A.size());
  return Tensor::make_result("mse_l2", Shape{1}, {acc / n}, {&a, &b}, [n](Node& self) {
    const auto& A = parent_data(self, 0);
    const auto& B = parent_data(self, 1);
    const double k = 2.0 * self.grad[0] / n;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < A.size(); ++i) (*g)[i] += k * (A[i] - B[i]);
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < A.size(); ++i) (*g)[i] -= k * (A[i] - B[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Lookup and pooling

Tensor embedding(const Tensor& table, std::span<const int> ids, Shape lead) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V, D]");
  if (shape_numel(lead) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids do not fill " +
                         shape_str(lead));
  }
  const std::size_t V = table.dim(0), D = table.dim(1);
  const auto T = table.data();
  std::vector<double> out(ids.size() * D);
  std::vector<int> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                           std::to_string(V));
    }
    std::copy_n(&T[static_cast<std::size_t>(ids[i]) * D], D, &out[i * D]);
  }
  lead.push_back(D);
  return Tensor::make_result("embedding", std::move(lead), std::move(out), {&table},
                             [D, idx = std::move(idx)](Node& self) {
                               auto* g = parent_grad(self, 0);
                               if (!g) return;
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 double* dst = &(*g)[static_cast<std::size_t>(idx[i]) * D];
                                 for (std::size_t d = 0; d < D; ++d) dst[d] += self.grad[i * D + d];
                               }
                             });
}

Tensor masked_mean_pool(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 3 || mask.size() != x.dim(0) * x.dim(1)) {
    throw DimensionError("masked_mean_pool: mask of " + std::to_string(mask.size()) +
                         " flags for " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
  const auto X = x.data();
  std::vector<double> out(B * D, 0.0);
  std::vector<double> weight(B * T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t count = 0;
    for (std::size_t t = 0; t < T; ++t) count += mask[b * T + t] ? 1 : 0;
    if (count == 0) continue;
    const double w = 1.0 / static_cast<double>(count);
    for (std::size_t t = 0; t < T; ++t) {
      if (!mask[b * T + t]) continue;
      weight[b * T + t] = w;
      for (std::size_t d = 0; d < D; ++d) out[b * D + d] += X[(b * T + t) * D + d];
    }
    for (std::size_t d = 0; d < D; ++d) out[b * D + d] *= w;
  }
  return Tensor::make_result("masked_mean_pool", Shape{B, D}, std::move(out), {&x},
                             [B, T, D, weight = std::move(weight)](Node& self) {
                               auto* g = parent_grad(self, 0);
                               if (!g) return;
                               for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t t = 0; t < T; ++t) {
                                   const double w = weight[b * T + t];
                                   if (w == 0.0) continue;
                                   for (std::size_t d = 0; d < D; ++d)
                                     (*g)[(b * T + t) * D + d] += w * self.grad[b * D + d];
                                 }
                             });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != x.dim(1) ||
      w.dim(2) != w.dim(3) || b.dim(0) != w.dim(0) || x.dim(2) + 2 * pad < w.dim(2) ||
      x.dim(3) + 2 * pad < w.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
  const auto X = x.data();
  const auto Wt = w.data();
  const auto Bs = b.data();
  std::vector<double> out(B * O * Ho * Wo);
  const auto in_at = [&](std::size_t bb, std::size_t c, long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
    return X[((bb * C + c) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
  };
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xo = 0; xo < Wo; ++xo) {
          double acc = Bs[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx)
                acc += Wt[((o * C + c) * K + ky) * K + kx] *
                       in_at(bb, c, static_cast<long>(y + ky) - static_cast<long>(pad),
                             static_cast<long>(xo + kx) - static_cast<long>(pad));
          out[((bb * O + o) * Ho + y) * Wo + xo] = acc;
        }
  return Tensor::make_result(
      "conv2d", Shape{B, O, Ho, Wo}, std::move(out), {&x, &w, &b},
      [B, C, H, W, O, K, Ho, Wo, pad](Node& self) {
        const auto& X = parent_data(self, 0);
        const auto& Wt = parent_data(self, 1);
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < Ho; ++y)
              for (std::size_t xo = 0; xo < Wo; ++xo) {
                const double g = self.grad[((bb * O + o) * Ho + y) * Wo + xo];
                if (gb) (*gb)[o] += g;
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c)
                  for (std::size_t ky = 0; ky < K; ++ky) {
                    const long yy = static_cast<long>(y + ky) - static_cast<long>(pad);
                    if (yy < 0 || yy >= static_cast<long>(H)) continue;
                    for (std::size_t kx = 0; kx < K; ++kx) {
                      const long xx = static_cast<long>(xo + kx) - static_cast<long>(pad);
                      if (xx < 0 || xx >= static_cast<long>(W)) continue;
                      const std::size_t xi = ((bb * C + c) * H + static_cast<std::size_t>(yy)) * W +
                                             static_cast<std::size_t>(xx);
                      const std::size_t wi = ((o * C + c) * K + ky) * K + kx;
                      if (gw) (*gw)[wi] += g * X[xi];
                      if (gx) (*gx)[xi] += g * Wt[wi];
                    }
                  }
              }
      });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  if (x.rank() != 4 || k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw DimensionError("avg_pool2d: window " + std::to_string(k) + " does not tile " +
                         shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  const auto X = x.data();
  std::vector<double> out(B * C * Ho * Wo, 0.0);
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        out[(p * Ho + y / k) * Wo + xx / k] += X[(p * H + y) * W + xx] * inv;
  return Tensor::make_result("avg_pool2d", Shape{B, C, Ho, Wo}, std::move(out), {&x},
                             [B, C, H, W, Ho, Wo, k, inv](Node& self) {
                               auto* g = parent_grad(self, 0);
                               if (!g) return;
                               for (std::size_t p = 0; p < B * C; ++p)
                                 for (std::size_t y = 0; y < H; ++y)
                                   for (std::size_t xx = 0; xx < W; ++xx)
                                     (*g)[(p * H + y) * W + xx] +=
                                         self.grad[(p * Ho + y / k) * Wo + xx / k] * inv;
                             });
}

}  // namespace vqg
