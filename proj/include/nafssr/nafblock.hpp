#pragma once

#include "nafssr/param_store.hpp"

namespace nafssr {

/// Residual-branch multiplier for one stochastic-depth unit: 0 when the unit
/// is dropped, 1/(1-p) when kept during training, 1 at inference.
struct DropDecision {
    double scale = 1.0;

    static DropDecision inference() { return {1.0}; }
    static DropDecision dropped() { return {0.0}; }
    static DropDecision kept(double p) { return {1.0 / (1.0 - p)}; }
    bool is_dropped() const { return scale == 0.0; }
};

template <typename T>
struct NafBlockParams {
    LayerNormParams<T> ln1, ln2;
    ConvParams<T> conv_expand;  // 1x1, c -> 2c
    ConvParams<T> conv_dw;      // depthwise 3x3 on 2c
    ConvParams<T> sca;          // 1x1, c -> c
    ConvParams<T> conv_proj;    // 1x1, c -> c
    ConvParams<T> ffn_expand;   // 1x1, c -> 2c
    ConvParams<T> ffn_proj;     // 1x1, c -> c
    Tensor<T> beta;             // (1, c, 1, 1), zero-initialized
    Tensor<T> gamma_ffn;        // (1, c, 1, 1), zero-initialized

    int width() const { return beta.shape().c; }

    static void add_to(ParamStore<T>& store, const std::string& prefix, int c, Rng& rng);
    static NafBlockParams view(const ParamStore<T>& store, const std::string& prefix);
};

/// y1 = x + s*beta*MBConv(LN1(x)); out = y1 + s*gamma*FFN(LN2(y1)).
template <typename T>
Tensor<T> nafblock_forward(const Tensor<T>& x, const NafBlockParams<T>& p, DropDecision drop,
                           const PoolingPolicy& pool = PoolingPolicy::global());

/// Trainable scalars in one block of width c: 7c^2 + 33c.
std::size_t nafblock_param_count(int c);

/// Primitive op names a NAFBlock forward may record.
const std::vector<std::string>& nafblock_op_registry();

}  // namespace nafssr
