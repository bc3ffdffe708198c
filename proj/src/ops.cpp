#include "dlm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dlm::ops {
namespace {

template <typename T>
using Node = TensorNode<T>;

// Tape to record on, if any input participates in differentiation.
template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int resolved = axis < 0 ? axis + r : axis;
  if (resolved < 0 || resolved >= r) {
    throw std::out_of_range(std::string(op) + ": axis " + std::to_string(axis) + " is invalid for rank " +
                            std::to_string(rank));
  }
  return static_cast<std::size_t>(resolved);
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da == db || db == 1) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_to_string(a) + " with " +
                       shape_to_string(b));
    }
  }
  return out;
}

// Flat offset into `in` for every element of `out`, with `in` right-aligned
// against `out` and size-1 extents broadcast.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t running = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t extent = in[i - pad];
    stride[i] = extent == 1 ? 0 : running;
    running *= extent;
  }
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    offsets[flat] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++counter[axis] < out[axis]) {
        offset += stride[axis];
        break;
      }
      offset -= stride[axis] * (counter[axis] - 1);
      counter[axis] = 0;
    }
  }
  return offsets;
}

// C[m,n] += A[m,k] B[k,n]. Each C entry accumulates over k in ascending order.
template <typename T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] B[k,n]^T
template <typename T>
void gemm_grad_a(std::size_t m, std::size_t k, std::size_t n, const T* dc, const T* b, T* da) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      da[i * k + p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T dC[m,n]
template <typename T>
void gemm_grad_b(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* dc, T* db) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data) {
  return Tensor<T>(std::move(shape), std::move(data));
}

// Shared helper for broadcasting elementwise binaries. `forward(x, y)` gives
// the value, `partials(x, y) -> {d/dx, d/dy}` the local derivatives.
template <typename T, typename Forward, typename Partials>
Tensor<T> broadcast_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Forward forward,
                           Partials partials) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t total = shape_numel(out_shape);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  std::vector<std::size_t> offs_a = same_a ? std::vector<std::size_t>{} : broadcast_offsets(out_shape, a.shape());
  std::vector<std::size_t> offs_b = same_b ? std::vector<std::size_t>{} : broadcast_offsets(out_shape, b.shape());

  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  std::vector<T> data(total);
  for (std::size_t i = 0; i < total; ++i) {
    data[i] = forward(ad[same_a ? i : offs_a[i]], bd[same_b ? i : offs_b[i]]);
  }
  Tensor<T> out = make_result(out_shape, std::move(data));

  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    Node<T>* on = out.node().get();
    tape->record(name, {a.node(), b.node()}, out.node(),
                 [an, bn, on, same_a, same_b, offs_a = std::move(offs_a), offs_b = std::move(offs_b), partials] {
                   const auto& g = on->grad;
                   if (an->requires_grad) an->ensure_grad();
                   if (bn->requires_grad) bn->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const std::size_t ia = same_a ? i : offs_a[i];
                     const std::size_t ib = same_b ? i : offs_b[i];
                     const auto [dx, dy] = partials(an->data[ia], bn->data[ib]);
                     if (an->requires_grad) an->grad[ia] += g[i] * dx;
                     if (bn->requires_grad) bn->grad[ib] += g[i] * dy;
                   }
                 });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape()[b.rank() - 1];
  if (k != kb) {
    throw ShapeError("matmul: shape mismatch " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);

  Shape out_shape;
  std::vector<std::size_t> offs_a, offs_b;  // per output batch, in units of matrices
  std::size_t rows = m;                     // rows per gemm
  std::size_t batches = 1;
  if (batch_b.empty()) {
    // b is a plain matrix: fold every batch dim of a into the row count.
    out_shape = batch_a;
    rows = shape_numel(batch_a) * m;
    offs_a = {0};
    offs_b = {0};
  } else {
    const Shape batch_out = broadcast_shape(batch_a, batch_b, "matmul");
    out_shape = batch_out;
    batches = shape_numel(batch_out);
    offs_a = broadcast_offsets(batch_out, batch_a);
    offs_b = broadcast_offsets(batch_out, batch_b);
  }
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> data(shape_numel(out_shape), T{0});
  const T* ad = a.node()->data.data();
  const T* bd = b.node()->data.data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    gemm_acc(rows, k, n, ad + offs_a[bi] * rows * k, bd + offs_b[bi] * k * n, data.data() + bi * rows * n);
  }
  Tensor<T> out = make_result(std::move(out_shape), std::move(data));

  if (Tape<T>* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    Node<T>* an = a.node().get();
    Node<T>* bn = b.node().get();
    Node<T>* on = out.node().get();
    tape->record("matmul", {a.node(), b.node()}, out.node(),
                 [an, bn, on, rows, k, n, batches, offs_a = std::move(offs_a), offs_b = std::move(offs_b)] {
                   const T* g = on->grad.data();
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t bi = 0; bi < batches; ++bi) {
                       gemm_grad_a(rows, k, n, g + bi * rows * n, bn->data.data() + offs_b[bi] * k * n,
                                   an->grad.data() + offs_a[bi] * rows * k);
                     }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t bi = 0; bi < batches; ++bi) {
                       gemm_grad_b(rows, k, n, an->data.data() + offs_a[bi] * rows * k, g + bi * rows * n,
                                   bn->grad.data() + offs_b[bi] * k * n);
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return std::pair<T, T>{T{1}, T{1}}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return std::pair<T, T>{y, x}; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> data(x.data().begin(), x.data().end());
  for (T& v : data) v *= factor;
  Tensor<T> out = make_result(x.shape(), std::move(data));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("scale", {x.node()}, out.node(), [xn, on, factor] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor<T> out = make_result(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("reshape", {x.node()}, out.node(), [xn, on] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) {
    throw ShapeError("permute: order of length " + std::to_string(order.size()) + " for shape " +
                     shape_to_string(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t axis : order) {
    if (axis >= rank || seen[axis]) throw std::out_of_range("permute: order is not a permutation");
    seen[axis] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[order[i]];

  // Input strides, reordered to walk the output in row-major order.
  std::vector<std::size_t> in_stride(rank);
  std::size_t running = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = running;
    running *= x.shape()[i];
  }
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) stride[i] = in_stride[order[i]];

  const std::size_t total = x.numel();
  std::vector<std::size_t> source(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    source[flat] = offset;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++counter[axis] < out_shape[axis]) {
        offset += stride[axis];
        break;
      }
      offset -= stride[axis] * (counter[axis] - 1);
      counter[axis] = 0;
    }
  }

  std::vector<T> data(total);
  const auto& xd = x.node()->data;
  for (std::size_t i = 0; i < total; ++i) data[i] = xd[source[i]];
  Tensor<T> out = make_result(std::move(out_shape), std::move(data));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("permute", {x.node()}, out.node(), [xn, on, source = std::move(source)] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[source[i]] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b) {
  std::vector<std::size_t> order(x.rank());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (axis_a >= order.size() || axis_b >= order.size()) {
    throw std::out_of_range("transpose: axes out of range for shape " + shape_to_string(x.shape()));
  }
  std::swap(order[axis_a], order[axis_b]);
  return permute(x, order);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[ax];

  const auto& xd = x.node()->data;
  std::vector<T> y(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) peak = std::max(peak, xd[base + i * inner]);
      T total{0};
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(xd[base + i * inner] - peak);
        y[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= total;
    }
  }
  Tensor<T> out = make_result(shape, std::move(y));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("softmax", {x.node()}, out.node(), [xn, on, outer, inner, len] {
      xn->ensure_grad();
      const auto& g = on->grad;
      const auto& yv = on->data;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot{0};
          for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * yv[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * inner;
            xn->grad[idx] += yv[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: input must have rank >= 1");
  const std::size_t width = x.shape().back();
  if (gamma.numel() != width || beta.numel() != width) {
    throw ShapeError("layer_norm: gamma/beta lengths " + std::to_string(gamma.numel()) + "/" +
                     std::to_string(beta.numel()) + " do not match last extent " + std::to_string(width) +
                     " of " + shape_to_string(x.shape()));
  }
  if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be positive");

  const std::size_t rows = x.numel() / width;
  const auto& xd = x.node()->data;
  const auto& gd = gamma.node()->data;
  const auto& bd = beta.node()->data;
  std::vector<T> y(xd.size());
  std::vector<T> xhat(xd.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * width;
    T mu{0};
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<T>(width);
    T var{0};
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(width);
    const T inv = T{1} / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      const T h = (row[j] - mu) * inv;
      xhat[r * width + j] = h;
      y[r * width + j] = gd[j] * h + bd[j];
    }
  }
  Tensor<T> out = make_result(x.shape(), std::move(y));
  if (Tape<T>* tape = recording_tape({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* gn = gamma.node().get();
    Node<T>* bn = beta.node().get();
    Node<T>* on = out.node().get();
    tape->record("layer_norm", {x.node(), gamma.node(), beta.node()}, out.node(),
                 [xn, gn, bn, on, rows, width, xhat = std::move(xhat), rstd = std::move(rstd)] {
                   const auto& g = on->grad;
                   if (gn->requires_grad) {
                     gn->ensure_grad();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < width; ++j) gn->grad[j] += g[r * width + j] * xhat[r * width + j];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < width; ++j) bn->grad[j] += g[r * width + j];
                   }
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     const T inv_width = T{1} / static_cast<T>(width);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const std::size_t base = r * width;
                       T mean_d{0}, mean_dh{0};
                       for (std::size_t j = 0; j < width; ++j) {
                         const T d = g[base + j] * gn->data[j];
                         mean_d += d;
                         mean_dh += d * xhat[base + j];
                       }
                       mean_d *= inv_width;
                       mean_dh *= inv_width;
                       for (std::size_t j = 0; j < width; ++j) {
                         const T d = g[base + j] * gn->data[j];
                         xn->grad[base + j] += rstd[r] * (d - mean_d - xhat[base + j] * mean_dh);
                       }
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = static_cast<T>(0.044715);
  const auto& xd = x.node()->data;
  std::vector<T> y(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const T v = xd[i];
    y[i] = T{0.5} * v * (T{1} + std::tanh(c * (v + k * v * v * v)));
  }
  Tensor<T> out = make_result(x.shape(), std::move(y));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("gelu", {x.node()}, out.node(), [xn, on, c, k] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const T v = xn->data[i];
        const T t = std::tanh(c * (v + k * v * v * v));
        const T d = T{0.5} * (T{1} + t) + T{0.5} * v * (T{1} - t * t) * c * (T{1} + T{3} * k * v * v);
        xn->grad[i] += on->grad[i] * d;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (T& m : mask) m = rng.uniform() < rate ? T{0} : keep_scale;
  const auto& xd = x.node()->data;
  std::vector<T> y(xd.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] * mask[i];
  Tensor<T> out = make_result(x.shape(), std::move(y));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("dropout", {x.node()}, out.node(), [xn, on, mask = std::move(mask)] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const std::int32_t> ids, const Shape& index_shape) {
  if (weight.rank() != 2) throw ShapeError("embedding: weight must be [rows, width], got " + shape_to_string(weight.shape()));
  if (shape_numel(index_shape) != ids.size()) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill index shape " +
                     shape_to_string(index_shape));
  }
  const std::size_t rows = weight.dim(0);
  const std::size_t width = weight.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " out of range for " + std::to_string(rows) +
                              " rows");
    }
  }
  const auto& wd = weight.node()->data;
  std::vector<T> data(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(wd.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                data.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  Shape out_shape = index_shape;
  out_shape.push_back(width);
  Tensor<T> out = make_result(std::move(out_shape), std::move(data));
  if (Tape<T>* tape = recording_tape({&weight})) {
    out.set_requires_grad(true);
    Node<T>* wn = weight.node().get();
    Node<T>* on = out.node().get();
    tape->record("embedding", {weight.node()}, out.node(),
                 [wn, on, width, ids = std::vector<std::int32_t>(ids.begin(), ids.end())] {
                   wn->ensure_grad();
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     T* dst = wn->grad.data() + static_cast<std::size_t>(ids[i]) * width;
                     const T* src = on->grad.data() + i * width;
                     for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  if (axis >= x.rank()) throw std::out_of_range("select: axis out of range for " + shape_to_string(x.shape()));
  if (index >= x.dim(axis)) throw std::out_of_range("select: index out of range for " + shape_to_string(x.shape()));
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out_shape.push_back(shape[i]);

  const auto& xd = x.node()->data;
  std::vector<T> data(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) data[o * inner + in] = xd[(o * len + index) * inner + in];
  Tensor<T> out = make_result(std::move(out_shape), std::move(data));
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("select", {x.node()}, out.node(), [xn, on, outer, inner, len, index] {
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in)
          xn->grad[(o * len + index) * inner + in] += on->grad[o * inner + in];
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_index) {
  if (logits.rank() == 0) throw ShapeError("cross_entropy: logits must have a class axis");
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.numel() / classes;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_to_string(logits.shape()));
  }
  std::size_t valid = 0;
  for (std::int32_t t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    ++valid;
  }

  const auto& xd = logits.node()->data;
  std::vector<T> probs(valid ? xd.size() : 0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows && valid; ++r) {
    if (targets[r] == ignore_index) continue;
    const T* row = xd.data() + r * classes;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < classes; ++c) peak = std::max(peak, row[c]);
    T denom{0};
    for (std::size_t c = 0; c < classes; ++c) {
      const T e = std::exp(row[c] - peak);
      probs[r * classes + c] = e;
      denom += e;
    }
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= denom;
    total += static_cast<double>(std::log(denom) + peak - row[targets[r]]);
  }
  const T loss = valid ? static_cast<T>(total / static_cast<double>(valid)) : T{0};
  Tensor<T> out = Tensor<T>::scalar(loss);
  if (Tape<T>* tape = recording_tape({&logits})) {
    out.set_requires_grad(true);
    Node<T>* ln = logits.node().get();
    Node<T>* on = out.node().get();
    tape->record("cross_entropy", {logits.node()}, out.node(),
                 [ln, on, rows, classes, valid, ignore_index, probs = std::move(probs),
                  targets = std::vector<std::int32_t>(targets.begin(), targets.end())] {
                   ln->ensure_grad();
                   if (!valid) return;
                   const T scale_factor = on->grad[0] / static_cast<T>(valid);
                   for (std::size_t r = 0; r < rows; ++r) {
                     if (targets[r] == ignore_index) continue;
                     for (std::size_t c = 0; c < classes; ++c) {
                       T d = probs[r * classes + c];
                       if (static_cast<std::int32_t>(c) == targets[r]) d -= T{1};
                       ln->grad[r * classes + c] += scale_factor * d;
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (Tape<T>* tape = recording_tape({&x})) {
    out.set_requires_grad(true);
    Node<T>* xn = x.node().get();
    Node<T>* on = out.node().get();
    tape->record("sum", {x.node()}, out.node(), [xn, on] {
      xn->ensure_grad();
      for (T& g : xn->grad) g += on->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

#define DLM_INSTANTIATE(T)                                                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                           \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> transpose<T>(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                             \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                     \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&, bool);                              \
  template Tensor<T> embedding<T>(const Tensor<T>&, std::span<const std::int32_t>, const Shape&);   \
  template Tensor<T> select<T>(const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::int32_t>, std::int32_t); \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
  template Tensor<T> mean<T>(const Tensor<T>&);

DLM_INSTANTIATE(float)
DLM_INSTANTIATE(double)

#undef DLM_INSTANTIATE

}  // namespace dlm::ops
