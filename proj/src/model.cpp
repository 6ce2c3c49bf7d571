#include "nafssr/model.hpp"

#include <cmath>
#include <stdexcept>

namespace nafssr {

ModelConfig ModelConfig::variant(char name, int scale) {
    ModelConfig cfg;
    switch (name) {
        case 'T': cfg.width = 48; cfg.blocks = 16; break;
        case 'S': cfg.width = 64; cfg.blocks = 32; break;
        case 'B': cfg.width = 96; cfg.blocks = 64; break;
        case 'L': cfg.width = 128; cfg.blocks = 128; break;
        default: throw std::invalid_argument(std::string("unknown variant '") + name + "'");
    }
    cfg.scale = scale;
    cfg.scam_count = cfg.blocks;
    cfg.drop_prob = variant_drop_prob(name);
    cfg.validate();
    return cfg;
}

double ModelConfig::variant_drop_prob(char name) {
    switch (name) {
        case 'T': return 0.0;
        case 'S': return 0.1;
        case 'B': return 0.2;
        case 'L': return 0.3;
        default: throw std::invalid_argument(std::string("unknown variant '") + name + "'");
    }
}

void ModelConfig::validate() const {
    if (width < 1) throw std::invalid_argument("model width must be positive");
    if (blocks < 0) throw std::invalid_argument("block count must be non-negative");
    if (scale != 2 && scale != 4) throw std::invalid_argument("scale must be 2 or 4, got " + std::to_string(scale));
    if (scam_count < 0 || scam_count > blocks)
        throw std::invalid_argument("scam_count must lie in [0, blocks], got " + std::to_string(scam_count));
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw std::invalid_argument("drop_prob must lie in [0, 1)");
    if (tlsc_window && (tlsc_window->h <= 0 || tlsc_window->w <= 0))
        throw std::invalid_argument("TLSC window must be positive");
}

std::vector<int> ModelConfig::scam_positions() const {
    // k SCAMs centered in the trunk and evenly spaced; k == blocks attaches all.
    std::vector<int> pos;
    for (int j = 0; j < scam_count; ++j)
        pos.push_back(static_cast<int>(std::floor((j + 0.5) * blocks / scam_count)));
    return pos;
}

namespace {

std::string block_prefix(int i) { return "blocks." + std::to_string(i); }

}  // namespace

template <typename T>
ParamStore<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed, "init");
    ParamStore<T> store;
    const int c = cfg.width;
    add_conv(store, "intro", 3, c, 3, 1, rng);
    const auto scams = cfg.scam_positions();
    std::size_t next_scam = 0;
    for (int i = 0; i < cfg.blocks; ++i) {
        NafBlockParams<T>::add_to(store, block_prefix(i), c, rng);
        if (next_scam < scams.size() && scams[next_scam] == i) {
            ScamParams<T>::add_to(store, block_prefix(i) + ".scam", c, rng);
            ++next_scam;
        }
    }
    add_conv(store, "head", c, 3 * cfg.scale * cfg.scale, 3, 1, rng);
    return store;
}

template <typename T>
StereoPair<T> model_forward(const ModelConfig& cfg, const ParamStore<T>& params, const Tensor<T>& lr_l,
                            const Tensor<T>& lr_r, const ForwardOptions& opts) {
    if (lr_l.shape() != lr_r.shape())
        throw ShapeError("model_forward: views differ: " + lr_l.shape().str() + " vs " + lr_r.shape().str());
    if (lr_l.shape().c != 3) throw ShapeError("model_forward: expected RGB input, got " + lr_l.shape().str());
    if (opts.train && opts.drop_prob > 0 && !opts.rng)
        throw std::invalid_argument("model_forward: training with stochastic depth needs an RNG");

    const PoolingPolicy pool = opts.train ? PoolingPolicy::global() : opts.pool;
    const ConvParams<T> intro = conv_view(params, "intro");
    const ConvParams<T> head = conv_view(params, "head");

    Tensor<T> f_l = conv2d(lr_l, intro);
    Tensor<T> f_r = conv2d(lr_r, intro);
    for (int i = 0; i < cfg.blocks; ++i) {
        DropDecision drop = DropDecision::inference();
        if (opts.train && opts.drop_prob > 0) {
            drop = opts.rng->uniform() < opts.drop_prob ? DropDecision::dropped() : DropDecision::kept(opts.drop_prob);
        }
        if (opts.unit_scales) opts.unit_scales->push_back(drop.scale);
        if (drop.is_dropped()) continue;
        const auto block = NafBlockParams<T>::view(params, block_prefix(i));
        f_l = nafblock_forward(f_l, block, drop, pool);
        f_r = nafblock_forward(f_r, block, drop, pool);
        const std::string scam_prefix = block_prefix(i) + ".scam";
        if (params.contains(scam_prefix + ".gamma_l")) {
            std::tie(f_l, f_r) = scam_forward(f_l, f_r, ScamParams<T>::view(params, scam_prefix), drop);
        }
    }
    const int s = cfg.scale;
    return {add(bilinear_resize(lr_l, s), pixel_shuffle(conv2d(f_l, head), s)),
            add(bilinear_resize(lr_r, s), pixel_shuffle(conv2d(f_r, head), s))};
}

std::size_t expected_param_count(const ModelConfig& cfg) {
    const std::size_t c = cfg.width;
    const std::size_t head_out = 3 * static_cast<std::size_t>(cfg.scale) * cfg.scale;
    return (3 * 9 * c + c) + cfg.blocks * nafblock_param_count(cfg.width) +
           cfg.scam_count * scam_param_count(cfg.width) + (c * 9 * head_out + head_out);
}

template ParamStore<float> build_model<float>(const ModelConfig&, std::uint64_t);
template ParamStore<double> build_model<double>(const ModelConfig&, std::uint64_t);
template StereoPair<float> model_forward<float>(const ModelConfig&, const ParamStore<float>&, const Tensor<float>&,
                                                const Tensor<float>&, const ForwardOptions&);
template StereoPair<double> model_forward<double>(const ModelConfig&, const ParamStore<double>&,
                                                  const Tensor<double>&, const Tensor<double>&,
                                                  const ForwardOptions&);

}  // namespace nafssr
