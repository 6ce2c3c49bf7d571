#pragma once

#include <optional>
#include <utility>

#include "nafssr/scam.hpp"

namespace nafssr {

/// Architecture descriptor. The published variants are T(48,16), S(64,32),
/// B(96,64) and L(128,128).
struct ModelConfig {
    int width = 48;
    int blocks = 16;
    int scale = 4;
    int scam_count = 16;
    double drop_prob = 0.0;
    std::optional<PoolWindow> tlsc_window;

    static ModelConfig variant(char name, int scale);
    /// Stochastic-depth probability the variant is trained with.
    static double variant_drop_prob(char name);
    void validate() const;
    /// Block indices followed by a SCAM, ascending.
    std::vector<int> scam_positions() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using StereoPair = std::pair<Tensor<T>, Tensor<T>>;

struct ForwardOptions {
    bool train = false;
    double drop_prob = 0.0;
    Rng* rng = nullptr;  // drop decisions; required when train && drop_prob > 0
    PoolingPolicy pool = PoolingPolicy::global();
    std::vector<double>* unit_scales = nullptr;  // receives each unit's drop scale when set

    static ForwardOptions eval(PoolingPolicy pool = PoolingPolicy::global()) {
        ForwardOptions o;
        o.pool = pool;
        return o;
    }
    static ForwardOptions training(double p, Rng& rng) {
        ForwardOptions o;
        o.train = true;
        o.drop_prob = p;
        o.rng = &rng;
        return o;
    }
};

/// Builds every parameter of the model from one seed. Intro and trunk
/// weights exist once and serve both views.
template <typename T>
ParamStore<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Super-resolves a stereo pair: bilinear upsample plus the learned residual.
/// Each NAFBlock with its attached SCAM is one stochastic-depth unit.
template <typename T>
StereoPair<T> model_forward(const ModelConfig& cfg, const ParamStore<T>& params, const Tensor<T>& lr_l,
                            const Tensor<T>& lr_r, const ForwardOptions& opts);

/// Expected parameter count for a configuration, from the closed forms.
std::size_t expected_param_count(const ModelConfig& cfg);

}  // namespace nafssr
