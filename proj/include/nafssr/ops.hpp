#pragma once

#include <array>

#include "nafssr/tensor.hpp"

namespace nafssr {

enum class ElementwiseKind { add, sub, mul };

/// a (op) b. b is either the same shape as a or a per-channel tensor of
/// shape (1, c, 1, 1) or (n, c, 1, 1) broadcast over the spatial axes.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseKind kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, ElementwiseKind::mul); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// |a| with subgradient 0 at exactly zero.
template <typename T>
Tensor<T> abs(const Tensor<T>& a);

/// Sum of all elements as a (1,1,1,1) tensor. Accumulates in double.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// Softmax over the last (w) axis of every row.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a);

/// Per-(n, c) slice matrix product: a is (n, h, w1, k) and b is (n, h, k, w2)
/// in the tensor's (n, c, h, w) slots; the result is (n, h, w1, w2).
template <typename T>
Tensor<T> batched_row_matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Axis permutation: output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::array<int, 4> perm);

/// Concatenates along the batch axis. Not differentiable.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts);

/// Extracts batch item i. Not differentiable.
template <typename T>
Tensor<T> batch_item(const Tensor<T>& a, int i);

}  // namespace nafssr
