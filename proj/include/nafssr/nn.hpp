#pragma once

#include "nafssr/ops.hpp"
#include "nafssr/tlsc.hpp"

namespace nafssr {

/// Stride-1 "same" convolution parameters. weight is (c_out, c_in/groups, k, k)
/// with k in {1, 3}; bias is (1, c_out, 1, 1).
template <typename T>
struct ConvParams {
    Tensor<T> weight;
    Tensor<T> bias;
    int groups = 1;

    int out_channels() const { return weight.shape().n; }
    int in_channels() const { return weight.shape().c * groups; }
    int kernel() const { return weight.shape().h; }
};

/// Per-location channel normalization parameters; weight and bias are (1, c, 1, 1).
template <typename T>
struct LayerNormParams {
    Tensor<T> weight;
    Tensor<T> bias;
    double eps = 1e-6;
};

/// Cross-correlation with zero padding (k - 1) / 2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

template <typename T>
Tensor<T> layernorm2d(const Tensor<T>& x, const LayerNormParams<T>& p);

/// First channel half times second channel half.
template <typename T>
Tensor<T> simple_gate(const Tensor<T>& x);

/// x * W pool(x): the pooled statistic goes through a 1x1 conv and scales x
/// channel-wise (per location under a local policy).
template <typename T>
Tensor<T> simplified_channel_attention(const Tensor<T>& x, const ConvParams<T>& w, const PoolingPolicy& pool);

/// Channel c*s*s + i*s + j moves to output channel c at (h*s + i, w*s + j).
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int s);

/// Align-corners-false bilinear resize by an integer factor with edge clamping.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int s);

namespace fault_injection {
/// Test hook: negates the SimpleGate adjoint so gradient checks can be shown
/// to catch a broken primitive.
void set_flip_simple_gate_adjoint(bool on);
bool flip_simple_gate_adjoint();
}  // namespace fault_injection

}  // namespace nafssr
