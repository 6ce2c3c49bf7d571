#include "nafssr/nafblock.hpp"

namespace nafssr {

template <typename T>
void NafBlockParams<T>::add_to(ParamStore<T>& store, const std::string& prefix, int c, Rng& rng) {
    add_layernorm(store, prefix + ".ln1", c);
    add_conv(store, prefix + ".conv_expand", c, 2 * c, 1, 1, rng);
    add_conv(store, prefix + ".conv_dw", 2 * c, 2 * c, 3, 2 * c, rng);
    add_conv(store, prefix + ".sca", c, c, 1, 1, rng);
    add_conv(store, prefix + ".conv_proj", c, c, 1, 1, rng);
    add_layernorm(store, prefix + ".ln2", c);
    add_conv(store, prefix + ".ffn_expand", c, 2 * c, 1, 1, rng);
    add_conv(store, prefix + ".ffn_proj", c, c, 1, 1, rng);
    store.add(prefix + ".beta", Tensor<T>::zeros(Shape{1, c, 1, 1}));
    store.add(prefix + ".gamma_ffn", Tensor<T>::zeros(Shape{1, c, 1, 1}));
}

template <typename T>
NafBlockParams<T> NafBlockParams<T>::view(const ParamStore<T>& store, const std::string& prefix) {
    NafBlockParams p;
    p.ln1 = layernorm_view(store, prefix + ".ln1");
    p.ln2 = layernorm_view(store, prefix + ".ln2");
    p.conv_expand = conv_view(store, prefix + ".conv_expand");
    const int c2 = p.conv_expand.out_channels();
    p.conv_dw = conv_view(store, prefix + ".conv_dw", c2);
    p.sca = conv_view(store, prefix + ".sca");
    p.conv_proj = conv_view(store, prefix + ".conv_proj");
    p.ffn_expand = conv_view(store, prefix + ".ffn_expand");
    p.ffn_proj = conv_view(store, prefix + ".ffn_proj");
    p.beta = store.get(prefix + ".beta");
    p.gamma_ffn = store.get(prefix + ".gamma_ffn");
    return p;
}

namespace {

template <typename T>
Tensor<T> branch_scale(const Tensor<T>& s, DropDecision drop) {
    return drop.scale == 1.0 ? s : scale(s, static_cast<T>(drop.scale));
}

}  // namespace

template <typename T>
Tensor<T> nafblock_forward(const Tensor<T>& x, const NafBlockParams<T>& p, DropDecision drop,
                           const PoolingPolicy& pool) {
    if (x.shape().c != p.width())
        throw ShapeError("nafblock_forward: input " + x.shape().str() + " does not match block width " +
                         std::to_string(p.width()));
    if (drop.is_dropped()) return x;

    Tensor<T> t = layernorm2d(x, p.ln1);
    t = conv2d(t, p.conv_expand);
    t = conv2d(t, p.conv_dw);
    t = simple_gate(t);
    t = simplified_channel_attention(t, p.sca, pool);
    t = conv2d(t, p.conv_proj);
    const Tensor<T> y1 = add(x, mul(t, branch_scale(p.beta, drop)));

    Tensor<T> f = layernorm2d(y1, p.ln2);
    f = conv2d(f, p.ffn_expand);
    f = simple_gate(f);
    f = conv2d(f, p.ffn_proj);
    return add(y1, mul(f, branch_scale(p.gamma_ffn, drop)));
}

std::size_t nafblock_param_count(int c) {
    const std::size_t C = static_cast<std::size_t>(c);
    return 7 * C * C + 33 * C;
}

const std::vector<std::string>& nafblock_op_registry() {
    static const std::vector<std::string> ops{"layernorm2d", "conv2d",  "conv2d_dw",       "simple_gate",
                                              "global_avg_pool", "local_avg_pool", "mul",   "mul_bc",
                                              "add",         "scale"};
    return ops;
}

template struct NafBlockParams<float>;
template struct NafBlockParams<double>;
template Tensor<float> nafblock_forward<float>(const Tensor<float>&, const NafBlockParams<float>&, DropDecision,
                                               const PoolingPolicy&);
template Tensor<double> nafblock_forward<double>(const Tensor<double>&, const NafBlockParams<double>&,
                                                 DropDecision, const PoolingPolicy&);

}  // namespace nafssr
