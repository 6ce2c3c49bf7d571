#pragma once

#include <utility>

#include "nafssr/nafblock.hpp"

namespace nafssr {

template <typename T>
struct ScamParams {
    LayerNormParams<T> ln_l, ln_r;
    ConvParams<T> w1_l, w1_r;  // query/key projections of the normalized views
    ConvParams<T> w2_l, w2_r;  // value projections of the raw views
    Tensor<T> gamma_l, gamma_r;  // (1, c, 1, 1), zero-initialized

    int width() const { return gamma_l.shape().c; }

    static void add_to(ParamStore<T>& store, const std::string& prefix, int c, Rng& rng);
    static ScamParams view(const ParamStore<T>& store, const std::string& prefix);
};

/// Row-wise left/right correlation. logits[n, h, i, j] correlates left column
/// i with right column j, scaled by 1/sqrt(c).
template <typename T>
struct AttentionMap {
    Tensor<T> logits;         // (n, h, w, w)
    Tensor<T> right_to_left;  // softmax over j: weights of right columns per left column
    Tensor<T> left_to_right;  // softmax over i, stored transposed as [n, h, j, i]
};

template <typename T>
AttentionMap<T> scam_attention(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p);

/// Bidirectional cross-view attention along image rows from one shared
/// correlation matrix, fused as x + gamma * F.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scam_forward(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p,
                                             DropDecision drop = DropDecision::inference());

/// Trainable scalars in one SCAM of width c: 4c^2 + 10c.
std::size_t scam_param_count(int c);

}  // namespace nafssr
