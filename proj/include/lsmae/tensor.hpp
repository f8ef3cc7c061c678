// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// tensors. The graph is define-by-run: every op appends a node holding the
// forward value, its parents, and a closure that scatters the node's
// gradient into the parents' gradients. Production code instantiates the
// engine at f32 (lsmae::Tensor); tests instantiate the same ops at f64 for
// shadow evaluation against finite differences.
//
// Broadcasting is restricted to leading batch dimensions: elementwise ops
// accept equal shapes or one operand whose shape is a trailing suffix of the
// other's; matmul accepts equal batch dims or a rank-2 operand shared across
// the batch.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lsmae/errors.hpp"

// Forward ops scan their outputs for NaN/Inf. On by default (cheap at desk
// scale); compile with -DLSMAE_CHECK_FINITE=0 to drop the scans.
#ifndef LSMAE_CHECK_FINITE
#define LSMAE_CHECK_FINITE 1
#endif

namespace lsmae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct TensorNodeT {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad, or downstream of a node that does
  std::vector<std::shared_ptr<TensorNodeT>> parents;
  std::function<void(TensorNodeT&)> backprop;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class TensorT {
 public:
  TensorT() = default;

  TensorT(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_ = std::make_shared<TensorNodeT<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
    node_->needs_grad = requires_grad;
  }

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> data(shape_numel(shape), T(0));
    return TensorT(std::move(shape), std::move(data), requires_grad);
  }

  static TensorT full(Shape shape, T v) {
    std::vector<T> data(shape_numel(shape), v);
    return TensorT(std::move(shape), std::move(data));
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<T>& value() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  // In-place mutation is reserved for optimizer updates on leaves.
  std::vector<T>& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void drop_grad() { node_->grad.clear(); }

  template <typename U>
  TensorT<U> cast(bool requires_grad = false) const {
    std::vector<U> data(node_->value.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<U>(node_->value[i]);
    return TensorT<U>(node_->shape, std::move(data), requires_grad);
  }

  std::shared_ptr<TensorNodeT<T>> node() const { return node_; }

  explicit TensorT(std::shared_ptr<TensorNodeT<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNodeT<T>> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
#if LSMAE_CHECK_FINITE
  for (T x : v) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value");
    }
  }
#else
  (void)op;
  (void)v;
#endif
}

template <typename T>
TensorT<T> make_op(const char* name, Shape shape, std::vector<T> value,
                   std::vector<TensorT<T>> inputs,
                   std::function<void(TensorNodeT<T>&)> backprop) {
  check_finite(name, value);
  auto node = std::make_shared<TensorNodeT<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.node()->needs_grad;
  node->needs_grad = needs;
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backprop = std::move(backprop);
  }
  return TensorT<T>(std::move(node));
}

// Resolve leading-batch broadcast between two shapes: returns (out_shape,
// inner) where the smaller operand's shape is a trailing suffix of the
// larger's and `inner` is its element count.
inline std::pair<Shape, std::size_t> broadcast_suffix(const char* op, const Shape& a,
                                                      const Shape& b) {
  const Shape& big = a.size() >= b.size() ? a : b;
  const Shape& small = a.size() >= b.size() ? b : a;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[off + i]) {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
  }
  return {big, shape_numel(small)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph: topologically ordered op records reachable from an output. Inputs
// precede their consumers; backward walks the list once in reverse.
// ---------------------------------------------------------------------------

template <typename T>
struct GraphT {
  std::vector<TensorNodeT<T>*> nodes;

  static GraphT from_output(const TensorT<T>& out) {
    GraphT g;
    if (!out.node()->needs_grad) return g;
    std::unordered_set<const TensorNodeT<T>*> visited;
    // Iterative post-order DFS: parents are emitted before consumers.
    std::vector<std::pair<TensorNodeT<T>*, std::size_t>> stack;
    stack.emplace_back(out.node().get(), 0);
    visited.insert(out.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      bool descended = false;
      while (next < node->parents.size()) {
        TensorNodeT<T>* p = node->parents[next++].get();
        if (p->needs_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
          descended = true;
          break;
        }
      }
      if (!descended && next >= node->parents.size()) {
        g.nodes.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }
};

using Graph = GraphT<float>;

// Clears accumulated gradients on every node reachable from `root`,
// including leaves; required before re-running backward on the same graph.
template <typename T>
void zero_grads(const TensorT<T>& root) {
  for (TensorNodeT<T>* node : GraphT<T>::from_output(root).nodes) node->grad.clear();
}

// Accumulates gradients for every needs_grad node reachable from `loss`,
// visiting each node exactly once. Deterministic for a fixed graph.
template <typename T>
void backward(const TensorT<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.node()->needs_grad) return;
  GraphT<T> graph = GraphT<T>::from_output(loss);
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    TensorNodeT<T>* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
TensorT<T> binary_broadcast(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd,
                            Bwd bwd) {
  auto [out_shape, inner] = broadcast_suffix(name, a.shape(), b.shape());
  const bool a_is_big = a.shape().size() >= b.shape().size();
  const std::size_t n = shape_numel(out_shape);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a_is_big ? av[i] : av[i % inner];
    const T y = a_is_big ? bv[i % inner] : bv[i];
    out[i] = fwd(x, y);
  }
  return make_op<T>(
      name, out_shape, std::move(out), {a, b},
      [a_is_big, inner, bwd](TensorNodeT<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::size_t n = self.value.size();
        std::vector<T>* ga = pa.needs_grad ? &pa.grad_buffer() : nullptr;
        std::vector<T>* gb = pb.needs_grad ? &pb.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const T x = a_is_big ? pa.value[i] : pa.value[i % inner];
          const T y = a_is_big ? pb.value[i % inner] : pb.value[i];
          const T g = self.grad[i];
          T dx, dy;
          bwd(x, y, g, dx, dy);
          if (ga) (*ga)[a_is_big ? i : i % inner] += dx;
          if (gb) (*gb)[a_is_big ? i % inner : i] += dy;
        }
      });
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_broadcast<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& dx, T& dy) {
        dx = g;
        dy = g;
      });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_broadcast<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& dx, T& dy) {
        dx = g;
        dy = -g;
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_broadcast<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& dx, T& dy) {
        dx = g * y;
        dy = g * x;
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return detail::make_op<T>("scale", x.shape(), std::move(out), {x},
                            [c](TensorNodeT<T>& self) {
                              auto& g = self.parents[0]->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
                            });
}

// ---------------------------------------------------------------------------
// matmul: a [..,M,K] x b [..,K,N] -> [..,M,N]. Batch dims must be equal, or
// one operand may be rank 2 and is then shared across the batch.
// ---------------------------------------------------------------------------

namespace detail {

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[i * K + k];
      if (aik == T(0)) continue;
      const T* brow = b + k * N;
      T* crow = c + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[M,N] += a[M,K] * b[N,K]^T
template <typename T>
void gemm_bt_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      T acc = 0;
      const T* arow = a + i * K;
      const T* brow = b + j * K;
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      c[i * N + j] += acc;
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void gemm_at_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* arow = a + m * K;
    const T* brow = b + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T amk = arow[k];
      if (amk == T(0)) continue;
      T* crow = c + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += amk * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul requires rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  const std::size_t Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
  Shape batch_a(sa.begin(), sa.end() - 2);
  Shape batch_b(sb.begin(), sb.end() - 2);
  if (K != Kb || (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const Shape& batch = batch_a.empty() ? batch_b : batch_a;
  const std::size_t B = shape_numel(batch);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();

  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<T> out(B * M * N, T(0));
  for (std::size_t bi = 0; bi < B; ++bi) {
    detail::gemm_acc(a.value().data() + (a_batched ? bi * M * K : 0),
                     b.value().data() + (b_batched ? bi * K * N : 0), out.data() + bi * M * N, M,
                     K, N);
  }
  return detail::make_op<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [M, K, N, B, a_batched, b_batched](TensorNodeT<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t bi = 0; bi < B; ++bi) {
          const T* gc = self.grad.data() + bi * M * N;
          const T* av = pa.value.data() + (a_batched ? bi * M * K : 0);
          const T* bv = pb.value.data() + (b_batched ? bi * K * N : 0);
          if (pa.needs_grad) {
            // dA = dC * B^T
            detail::gemm_bt_acc(gc, bv, pa.grad_buffer().data() + (a_batched ? bi * M * K : 0), M,
                                N, K);
          }
          if (pb.needs_grad) {
            // dB = A^T * dC
            detail::gemm_at_acc(av, gc, pb.grad_buffer().data() + (b_batched ? bi * K * N : 0), M,
                                K, N);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// layernorm over the last axis, with affine parameters gamma/beta of size D.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     T eps) {
  if (x.rank() < 1) throw ShapeError("layernorm requires rank >= 1");
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D) {
    throw ShapeError("layernorm: gamma/beta size must match last axis " + std::to_string(D));
  }
  if (!(eps > T(0))) throw ContractError("layernorm requires eps > 0");
  const std::size_t rows = x.numel() / D;
  const auto& xv = x.value();
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * D;
    T mean = 0;
    for (std::size_t j = 0; j < D; ++j) mean += row[j];
    mean /= static_cast<T>(D);
    T var = 0;
    for (std::size_t j = 0; j < D; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(D);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < D; ++j) {
      const T h = (row[j] - mean) * inv;
      (*xhat)[r * D + j] = h;
      out[r * D + j] = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return detail::make_op<T>(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [D, rows, xhat, inv_std](TensorNodeT<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<T>* gx = px.needs_grad ? &px.grad_buffer() : nullptr;
        std::vector<T>* gg = pg.needs_grad ? &pg.grad_buffer() : nullptr;
        std::vector<T>* gb = pb.needs_grad ? &pb.grad_buffer() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = self.grad.data() + r * D;
          const T* h = xhat->data() + r * D;
          if (gg || gb) {
            for (std::size_t j = 0; j < D; ++j) {
              if (gg) (*gg)[j] += dy[j] * h[j];
              if (gb) (*gb)[j] += dy[j];
            }
          }
          if (gx) {
            // dx = inv * (dyg - mean(dyg) - xhat * mean(dyg*xhat)), dyg = dy*gamma
            T mean_dyg = 0, mean_dyg_h = 0;
            for (std::size_t j = 0; j < D; ++j) {
              const T dyg = dy[j] * pg.value[j];
              mean_dyg += dyg;
              mean_dyg_h += dyg * h[j];
            }
            mean_dyg /= static_cast<T>(D);
            mean_dyg_h /= static_cast<T>(D);
            const T inv = (*inv_std)[r];
            for (std::size_t j = 0; j < D; ++j) {
              const T dyg = dy[j] * pg.value[j];
              (*gx)[r * D + j] += inv * (dyg - mean_dyg - h[j] * mean_dyg_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax over a given axis, computed with max-subtraction.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape()));
  }
  const std::size_t A = x.shape()[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t outer = x.numel() / (A * inner);
  const auto& xv = x.value();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * A * inner + in;
      T mx = xv[base];
      for (std::size_t k = 1; k < A; ++k) mx = std::max(mx, xv[base + k * inner]);
      T sum = 0;
      for (std::size_t k = 0; k < A; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < A; ++k) out[base + k * inner] /= sum;
    }
  }
  auto saved = std::make_shared<std::vector<T>>(out);
  return detail::make_op<T>(
      "softmax", x.shape(), std::move(out), {x},
      [A, inner, outer, saved](TensorNodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * A * inner + in;
            T dot = 0;
            for (std::size_t k = 0; k < A; ++k) {
              dot += self.grad[base + k * inner] * (*saved)[base + k * inner];
            }
            for (std::size_t k = 0; k < A; ++k) {
              const std::size_t idx = base + k * inner;
              gx[idx] += (*saved)[idx] * (self.grad[idx] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// gelu, tanh approximation:
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
  constexpr double kCubic = 0.044715;
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
  }
  return detail::make_op<T>(
      "gelu", x.shape(), std::move(out), {x}, [](TensorNodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double v = static_cast<double>(xv[i]);
          const double u = kSqrt2OverPi * (v + kCubic * v * v * v);
          const double th = std::tanh(u);
          const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
          const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
          gx[i] += self.grad[i] * static_cast<T>(d);
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  std::vector<T> out = x.value();
  return detail::make_op<T>("reshape", std::move(new_shape), std::move(out), {x},
                            [](TensorNodeT<T>& self) {
                              auto& gx = self.parents[0]->grad_buffer();
                              for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                            });
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// For each flat index of the permuted output, the flat index in the input.
inline std::vector<std::size_t> permute_index_map(const Shape& in_shape,
                                                  const std::vector<std::size_t>& perm) {
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = row_major_strides(in_shape);
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(perm.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) src += idx[i] * in_strides[perm[i]];
    map[flat] = src;
    for (std::size_t i = perm.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace detail

// General axis permutation (materialized copy).
template <typename T>
TensorT<T> transpose(const TensorT<T>& x, const std::vector<std::size_t>& perm) {
  if (perm.size() != x.rank()) {
    throw ShapeError("transpose: permutation rank " + std::to_string(perm.size()) +
                     " does not match tensor rank " + std::to_string(x.rank()));
  }
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[perm[i]];
  auto map = std::make_shared<std::vector<std::size_t>>(
      detail::permute_index_map(x.shape(), perm));
  const auto& xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
  return detail::make_op<T>("transpose", std::move(out_shape), std::move(out), {x},
                            [map](TensorNodeT<T>& self) {
                              auto& gx = self.parents[0]->grad_buffer();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                gx[(*map)[i]] += self.grad[i];
                              }
                            });
}

// Swap two axes.
template <typename T>
TensorT<T> transpose(const TensorT<T>& x, std::size_t a, std::size_t b) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  if (a >= x.rank() || b >= x.rank()) throw ShapeError("transpose: axis out of range");
  std::swap(perm[a], perm[b]);
  return transpose(x, perm);
}

template <typename T>
TensorT<T> concat(const TensorT<T>& a, const TensorT<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) {
    throw ShapeError("concat: rank mismatch or bad axis for " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " differ outside axis " + std::to_string(axis));
    }
  }
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t a_blk = a.dim(axis) * inner;
  const std::size_t b_blk = b.dim(axis) * inner;
  const std::size_t outer = a.numel() / a_blk;
  std::vector<T> out(a.numel() + b.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().data() + o * a_blk, a_blk, out.data() + o * (a_blk + b_blk));
    std::copy_n(b.value().data() + o * b_blk, b_blk, out.data() + o * (a_blk + b_blk) + a_blk);
  }
  return detail::make_op<T>(
      "concat", std::move(out_shape), std::move(out), {a, b},
      [a_blk, b_blk, outer](TensorNodeT<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = self.grad.data() + o * (a_blk + b_blk);
          if (pa.needs_grad) {
            T* ga = pa.grad_buffer().data() + o * a_blk;
            for (std::size_t i = 0; i < a_blk; ++i) ga[i] += g[i];
          }
          if (pb.needs_grad) {
            T* gb = pb.grad_buffer().data() + o * b_blk;
            for (std::size_t i = 0; i < b_blk; ++i) gb[i] += g[a_blk + i];
          }
        }
      });
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank() || start + len > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds on axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t in_blk = x.dim(axis) * inner;
  const std::size_t out_blk = len * inner;
  const std::size_t outer = x.numel() / in_blk;
  std::vector<T> out(outer * out_blk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.value().data() + o * in_blk + start * inner, out_blk, out.data() + o * out_blk);
  }
  return detail::make_op<T>(
      "slice", std::move(out_shape), std::move(out), {x},
      [in_blk, out_blk, outer, start, inner](TensorNodeT<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          T* g = gx.data() + o * in_blk + start * inner;
          const T* s = self.grad.data() + o * out_blk;
          for (std::size_t i = 0; i < out_blk; ++i) g[i] += s[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Row gather/scatter on [L, D] tensors (token dropping and restoration).
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_row_indices(const std::vector<std::size_t>& indices, std::size_t L) {
  std::vector<bool> seen(L, false);
  for (std::size_t idx : indices) {
    if (idx >= L) {
      throw lsmae::IndexError("row index " + std::to_string(idx) + " out of range [0," +
                              std::to_string(L) + ")");
    }
    if (seen[idx]) throw lsmae::IndexError("duplicate row index " + std::to_string(idx));
    seen[idx] = true;
  }
}

}  // namespace detail

// Selects rows of x in the given order.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<std::size_t>& indices) {
  if (x.rank() != 2) throw ShapeError("gather_rows requires a rank-2 tensor");
  const std::size_t L = x.dim(0), D = x.dim(1);
  detail::validate_row_indices(indices, L);
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  std::vector<T> out(indices.size() * D);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(x.value().data() + indices[k] * D, D, out.data() + k * D);
  }
  return detail::make_op<T>("gather_rows", {indices.size(), D}, std::move(out), {x},
                            [idx, D](TensorNodeT<T>& self) {
                              auto& gx = self.parents[0]->grad_buffer();
                              for (std::size_t k = 0; k < idx->size(); ++k) {
                                T* g = gx.data() + (*idx)[k] * D;
                                const T* s = self.grad.data() + k * D;
                                for (std::size_t j = 0; j < D; ++j) g[j] += s[j];
                              }
                            });
}

// Places rows at the given positions of an [L, D] output; every remaining row
// is a copy of `fill` (shape [D] or [1, D]). Gradients flow to both the
// scattered rows and, summed over filled positions, to the fill row.
template <typename T>
TensorT<T> scatter_rows(const TensorT<T>& rows, const std::vector<std::size_t>& indices,
                        std::size_t L, const TensorT<T>& fill) {
  if (rows.rank() != 2) throw ShapeError("scatter_rows requires a rank-2 tensor");
  const std::size_t K = rows.dim(0), D = rows.dim(1);
  if (indices.size() != K) {
    throw ShapeError("scatter_rows: " + std::to_string(indices.size()) + " indices for " +
                     std::to_string(K) + " rows");
  }
  if (fill.numel() != D) {
    throw ShapeError("scatter_rows: fill size " + std::to_string(fill.numel()) +
                     " does not match row width " + std::to_string(D));
  }
  detail::validate_row_indices(indices, L);
  auto idx = std::make_shared<std::vector<std::size_t>>(indices);
  auto covered = std::make_shared<std::vector<bool>>(L, false);
  for (std::size_t i : indices) (*covered)[i] = true;
  std::vector<T> out(L * D);
  for (std::size_t r = 0; r < L; ++r) {
    if (!(*covered)[r]) std::copy_n(fill.value().data(), D, out.data() + r * D);
  }
  for (std::size_t k = 0; k < K; ++k) {
    std::copy_n(rows.value().data() + k * D, D, out.data() + indices[k] * D);
  }
  return detail::make_op<T>(
      "scatter_rows", {L, D}, std::move(out), {rows, fill},
      [idx, covered, D, L](TensorNodeT<T>& self) {
        auto& prow = *self.parents[0];
        auto& pfill = *self.parents[1];
        if (prow.needs_grad) {
          auto& g = prow.grad_buffer();
          for (std::size_t k = 0; k < idx->size(); ++k) {
            const T* s = self.grad.data() + (*idx)[k] * D;
            for (std::size_t j = 0; j < D; ++j) g[k * D + j] += s[j];
          }
        }
        if (pfill.needs_grad) {
          auto& g = pfill.grad_buffer();
          for (std::size_t r = 0; r < L; ++r) {
            if ((*covered)[r]) continue;
            const T* s = self.grad.data() + r * D;
            for (std::size_t j = 0; j < D; ++j) g[j] += s[j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T acc = 0;
  for (T v : x.value()) acc += v;
  return detail::make_op<T>("sum", {1}, {acc}, {x}, [](TensorNodeT<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

}  // namespace lsmae
