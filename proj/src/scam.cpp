#include "nafssr/scam.hpp"

#include <cmath>

namespace nafssr {

template <typename T>
void ScamParams<T>::add_to(ParamStore<T>& store, const std::string& prefix, int c, Rng& rng) {
    add_layernorm(store, prefix + ".ln_l", c);
    add_layernorm(store, prefix + ".ln_r", c);
    add_conv(store, prefix + ".w1_l", c, c, 1, 1, rng);
    add_conv(store, prefix + ".w1_r", c, c, 1, 1, rng);
    add_conv(store, prefix + ".w2_l", c, c, 1, 1, rng);
    add_conv(store, prefix + ".w2_r", c, c, 1, 1, rng);
    store.add(prefix + ".gamma_l", Tensor<T>::zeros(Shape{1, c, 1, 1}));
    store.add(prefix + ".gamma_r", Tensor<T>::zeros(Shape{1, c, 1, 1}));
}

template <typename T>
ScamParams<T> ScamParams<T>::view(const ParamStore<T>& store, const std::string& prefix) {
    ScamParams p;
    p.ln_l = layernorm_view(store, prefix + ".ln_l");
    p.ln_r = layernorm_view(store, prefix + ".ln_r");
    p.w1_l = conv_view(store, prefix + ".w1_l");
    p.w1_r = conv_view(store, prefix + ".w1_r");
    p.w2_l = conv_view(store, prefix + ".w2_l");
    p.w2_r = conv_view(store, prefix + ".w2_r");
    p.gamma_l = store.get(prefix + ".gamma_l");
    p.gamma_r = store.get(prefix + ".gamma_r");
    return p;
}

namespace {

// (n, c, h, w) -> (n, h, w, c)
constexpr std::array<int, 4> kRowsByChannel{0, 2, 3, 1};
// (n, c, h, w) -> (n, h, c, w)
constexpr std::array<int, 4> kChannelsByRow{0, 2, 1, 3};
// (n, h, w, c) -> (n, c, h, w)
constexpr std::array<int, 4> kBackToNchw{0, 3, 1, 2};
constexpr std::array<int, 4> kSwapLast{0, 1, 3, 2};

template <typename T>
void check_views(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p) {
    if (x_l.shape() != x_r.shape())
        throw ShapeError("scam: left view " + x_l.shape().str() + " and right view " + x_r.shape().str() +
                         " differ");
    if (x_l.shape().c != p.width())
        throw ShapeError("scam: input " + x_l.shape().str() + " does not match width " + std::to_string(p.width()));
}

template <typename T>
Tensor<T> correlation(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p) {
    const Tensor<T> q = permute(conv2d(layernorm2d(x_l, p.ln_l), p.w1_l), kRowsByChannel);
    const Tensor<T> k_t = permute(conv2d(layernorm2d(x_r, p.ln_r), p.w1_r), kChannelsByRow);
    return scale(batched_row_matmul(q, k_t), static_cast<T>(1.0 / std::sqrt(double(p.width()))));
}

}  // namespace

template <typename T>
AttentionMap<T> scam_attention(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p) {
    check_views(x_l, x_r, p);
    AttentionMap<T> out;
    out.logits = correlation(x_l, x_r, p);
    out.right_to_left = softmax_lastdim(out.logits);
    out.left_to_right = softmax_lastdim(permute(out.logits, kSwapLast));
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> scam_forward(const Tensor<T>& x_l, const Tensor<T>& x_r, const ScamParams<T>& p,
                                             DropDecision drop) {
    check_views(x_l, x_r, p);
    if (drop.is_dropped()) return {x_l, x_r};

    const Tensor<T> logits = correlation(x_l, x_r, p);
    const Tensor<T> v_l = permute(conv2d(x_l, p.w2_l), kRowsByChannel);
    const Tensor<T> v_r = permute(conv2d(x_r, p.w2_r), kRowsByChannel);
    const Tensor<T> f_r2l = permute(batched_row_matmul(softmax_lastdim(logits), v_r), kBackToNchw);
    const Tensor<T> f_l2r =
        permute(batched_row_matmul(softmax_lastdim(permute(logits, kSwapLast)), v_l), kBackToNchw);

    auto gamma = [&](const Tensor<T>& g) { return drop.scale == 1.0 ? g : scale(g, static_cast<T>(drop.scale)); };
    return {add(x_l, mul(f_r2l, gamma(p.gamma_l))), add(x_r, mul(f_l2r, gamma(p.gamma_r)))};
}

std::size_t scam_param_count(int c) {
    const std::size_t C = static_cast<std::size_t>(c);
    return 4 * C * C + 10 * C;
}

template struct ScamParams<float>;
template struct ScamParams<double>;
template AttentionMap<float> scam_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                                   const ScamParams<float>&);
template AttentionMap<double> scam_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const ScamParams<double>&);
template std::pair<Tensor<float>, Tensor<float>> scam_forward<float>(const Tensor<float>&, const Tensor<float>&,
                                                                     const ScamParams<float>&, DropDecision);
template std::pair<Tensor<double>, Tensor<double>> scam_forward<double>(const Tensor<double>&,
                                                                       const Tensor<double>&,
                                                                       const ScamParams<double>&, DropDecision);

}  // namespace nafssr
