#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dlm/rng.hpp"
#include "dlm/tensor.hpp"

// Differentiable tensor operations. Each op computes its result eagerly and,
// when a tape is active on the calling thread and any input requires grad,
// records a backward rule on that tape.
namespace dlm::ops {

// [..., m, k] x [..., k, n] -> [..., m, n]; batch dims broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise with broadcasting (trailing-aligned).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis_a, std::size_t axis_b);

// Negative axis counts from the end.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// Normalizes over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Identity when !training or rate == 0; otherwise inverted dropout.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training);

// Rows of weight [V, H] gathered by ids; result shape index_shape + [H].
template <typename T>
Tensor<T> embedding(const Tensor<T>& weight, std::span<const std::int32_t> ids, const Shape& index_shape);

// Drops `axis`, keeping slice `index`.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);

// Mean negative log-likelihood over rows of logits [..., C] whose target is
// not ignore_index. Zero (with zero gradient) when every row is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::int32_t ignore_index);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

}  // namespace dlm::ops
