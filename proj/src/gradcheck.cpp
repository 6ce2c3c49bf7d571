#include "nafssr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "nafssr/training.hpp"

namespace nafssr {

template <typename T>
Tensor<T> finite_diff_grad(const std::function<double(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
    if (!(eps > 0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor<T> probe = x;
    auto v = probe.mutable_values();
    std::vector<T> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const T orig = v[i];
        v[i] = static_cast<T>(orig + eps);
        const double hi = f(probe);
        v[i] = static_cast<T>(orig - eps);
        const double lo = f(probe);
        v[i] = orig;
        g[i] = static_cast<T>((hi - lo) / (2 * eps));
    }
    return Tensor<T>(x.shape(), std::move(g));
}

template <typename T>
double gradient_error(const std::vector<Tensor<T>>& leaves, const std::function<Tensor<T>()>& forward, Rng& rng,
                      double eps) {
    Tensor<T> weights;
    std::vector<std::vector<T>> analytic;
    {
        for (const auto& l : leaves)
            if (l.node()) l.node()->grad.clear();
        const Tensor<T> out = forward();
        weights = random_uniform<T>(out.shape(), rng, -1, 1);
        sum(mul(out, weights)).backward();
        for (const auto& l : leaves) {
            const auto g = l.grad();
            analytic.emplace_back(g.begin(), g.end());
            if (analytic.back().empty()) analytic.back().assign(l.numel(), T(0));
        }
    }

    NoGradGuard guard;
    auto scalar = [&](const Tensor<T>&) {
        const Tensor<T> out = forward();
        const auto o = out.values(), w = weights.values();
        double acc = 0;
        for (std::size_t i = 0; i < o.size(); ++i) acc += double(o[i]) * double(w[i]);
        return acc;
    };
    double worst = 0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const Tensor<T> numeric = finite_diff_grad<T>(scalar, leaves[k], eps);
        double diff = 0, norm_a = 0, norm_n = 0;
        for (std::size_t i = 0; i < numeric.numel(); ++i) {
            const double a = analytic[k][i], n = numeric.values()[i];
            diff = std::max(diff, std::abs(a - n));
            norm_a = std::max(norm_a, std::abs(a));
            norm_n = std::max(norm_n, std::abs(n));
        }
        const double denom = std::max({norm_a, norm_n, 1e-12});
        worst = std::max(worst, diff / denom);
    }
    return worst;
}

namespace {
constexpr double kNumericEps = 3e-5;
}

double gradcheck_tolerance(int precision) {
    if (precision == 32) return 1e-3;
    if (precision == 64) return 1e-5;
    throw std::invalid_argument("precision must be 32 or 64");
}

const std::vector<std::string>& gradcheck_layers() {
    static const std::vector<std::string> names{
        "conv2d",          "layernorm2d",      "simple_gate",     "simplified_channel_attention",
        "local_avg_pool",  "pixel_shuffle_path", "softmax_lastdim", "batched_row_matmul",
        "l1_loss",         "scam",             "nafblock",        "nafssr_micro"};
    return names;
}

namespace {

// One check: leaf values (exactly representable in 32 bits) and the same
// computation instantiated at both precisions.
struct GradCase {
    std::vector<Tensor<double>> leaves;
    std::function<Tensor<float>(const std::vector<Tensor<float>>&)> f32;
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)> f64;
};

template <typename F>
GradCase make_case(std::vector<Tensor<double>> leaves, F f) {
    return GradCase{std::move(leaves), f, f};
}

template <typename X, typename Y>
Tensor<X> cast(const Tensor<Y>& t) {
    std::vector<X> v(t.values().begin(), t.values().end());
    return Tensor<X>(t.shape(), std::move(v));
}

Tensor<double> round_to_float(Tensor<double> t) {
    for (auto& v : t.mutable_values()) v = static_cast<double>(static_cast<float>(v));
    return t;
}

Tensor<double> draw(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    return round_to_float(random_uniform<double>(s, rng, lo, hi));
}

int pick(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

// Moves every parameter away from its initialization, so zero-initialized
// scales do not hide whole branches from the check.
std::vector<Tensor<double>> randomized(const ParamStore<double>& store, Rng& rng, std::vector<std::string>& names) {
    std::vector<Tensor<double>> out;
    for (const auto& e : store.entries()) {
        Tensor<double> t = e.value.detach().clone();
        for (auto& v : t.mutable_values()) v += rng.uniform(-0.25, 0.25);
        out.push_back(round_to_float(t));
        names.push_back(e.name);
    }
    return out;
}

template <typename X>
ParamStore<X> rebuild(const std::vector<std::string>& names, const std::vector<Tensor<X>>& leaves) {
    ParamStore<X> store;
    for (std::size_t i = 0; i < names.size(); ++i) store.add(names[i], leaves[i]);
    return store;
}

// Targets at least 0.1 away from the prediction, so no L1 kink is in reach.
Tensor<double> offset_target(const Tensor<double>& x, Rng& rng) {
    Tensor<double> t = x.detach().clone();
    for (auto& v : t.mutable_values()) v += (rng.coin() ? 1 : -1) * rng.uniform(0.1, 0.5);
    return round_to_float(t);
}

template <typename X>
using Leaves = std::vector<Tensor<X>>;

#define NAFSSR_X using X = typename std::decay_t<decltype(L)>::value_type::value_type

GradCase build_case(const std::string& name, Rng& rng) {
    if (name == "conv2d") {
        const int variant = pick(rng, 0, 2);
        const int k = variant == 0 ? 1 : 3;
        const int ci = variant == 2 ? pick(rng, 2, 4) : pick(rng, 1, 4);
        const int co = variant == 2 ? ci : pick(rng, 1, 4);
        const int groups = variant == 2 ? ci : 1;
        const Shape xs{pick(rng, 1, 2), ci, pick(rng, 1, 5), pick(rng, 1, 5)};
        return make_case({draw(xs, rng), draw(Shape{co, ci / groups, k, k}, rng), draw(Shape{1, co, 1, 1}, rng)},
                         [groups](const auto& L) {
                             NAFSSR_X;
                             return conv2d(L[0], ConvParams<X>{L[1], L[2], groups});
                         });
    }
    if (name == "layernorm2d") {
        const int c = pick(rng, 2, 6);
        const Shape xs{pick(rng, 1, 2), c, pick(rng, 1, 4), pick(rng, 1, 4)};
        return make_case({draw(xs, rng), draw(Shape{1, c, 1, 1}, rng, 0.5, 1.5), draw(Shape{1, c, 1, 1}, rng)},
                         [](const auto& L) {
                             NAFSSR_X;
                             LayerNormParams<X> p;
                             p.weight = L[1];
                             p.bias = L[2];
                             return layernorm2d(L[0], p);
                         });
    }
    if (name == "simple_gate") {
        const Shape xs{1, 2 * pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)};
        return make_case({draw(xs, rng)}, [](const auto& L) { return simple_gate(L[0]); });
    }
    if (name == "simplified_channel_attention") {
        const int c = pick(rng, 1, 4), h = pick(rng, 2, 6), w = pick(rng, 2, 6);
        const PoolingPolicy pool =
            rng.coin() ? PoolingPolicy::global() : PoolingPolicy::local({pick(rng, 1, h), pick(rng, 1, w)});
        return make_case({draw(Shape{pick(rng, 1, 2), c, h, w}, rng), draw(Shape{c, c, 1, 1}, rng),
                          draw(Shape{1, c, 1, 1}, rng)},
                         [pool](const auto& L) {
                             NAFSSR_X;
                             return simplified_channel_attention(L[0], ConvParams<X>{L[1], L[2], 1}, pool);
                         });
    }
    if (name == "local_avg_pool") {
        const int h = pick(rng, 1, 6), w = pick(rng, 1, 6);
        const Shape xs{1, pick(rng, 1, 3), h, w};
        const PoolWindow win{pick(rng, 1, h + 1), pick(rng, 1, w + 1)};
        return make_case({draw(xs, rng)}, [win](const auto& L) { return local_avg_pool(L[0], win); });
    }
    if (name == "pixel_shuffle_path") {
        // head convolution, pixel shuffle and the bilinear global residual
        const int s = pick(rng, 1, 2) * 2, c = pick(rng, 1, 3), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
        return make_case({draw(Shape{1, c, h, w}, rng), draw(Shape{1, 3, h, w}, rng),
                          draw(Shape{3 * s * s, c, 3, 3}, rng), draw(Shape{1, 3 * s * s, 1, 1}, rng)},
                         [s](const auto& L) {
                             NAFSSR_X;
                             return add(bilinear_resize(L[1], s),
                                        pixel_shuffle(conv2d(L[0], ConvParams<X>{L[2], L[3], 1}), s));
                         });
    }
    if (name == "softmax_lastdim") {
        const Shape xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 6)};
        return make_case({draw(xs, rng, -3, 3)}, [](const auto& L) { return softmax_lastdim(L[0]); });
    }
    if (name == "batched_row_matmul") {
        const int n = pick(rng, 1, 2), h = pick(rng, 1, 3), k = pick(rng, 1, 4);
        return make_case({draw(Shape{n, h, pick(rng, 1, 4), k}, rng), draw(Shape{n, h, k, pick(rng, 1, 4)}, rng)},
                         [](const auto& L) { return batched_row_matmul(L[0], L[1]); });
    }
    if (name == "l1_loss") {
        const Shape s{1, 3, pick(rng, 1, 4), pick(rng, 1, 4)};
        const auto sl = draw(s, rng), sr = draw(s, rng);
        const auto hl = offset_target(sl, rng), hr = offset_target(sr, rng);
        return make_case({sl, sr}, [hl, hr](const auto& L) {
            NAFSSR_X;
            return l1_loss(L[0], L[1], cast<X>(hl), cast<X>(hr));
        });
    }
    if (name == "scam") {
        const int c = pick(rng, 2, 4);
        ParamStore<double> store;
        ScamParams<double>::add_to(store, "scam", c, rng);
        std::vector<std::string> names;
        auto leaves = randomized(store, rng, names);
        const Shape s{pick(rng, 1, 2), c, pick(rng, 2, 3), pick(rng, 3, 5)};
        leaves.push_back(draw(s, rng));
        leaves.push_back(draw(s, rng));
        return make_case(leaves, [names](const auto& L) {
            NAFSSR_X;
            const auto p = ScamParams<X>::view(rebuild(names, L), "scam");
            const auto [ol, or_] = scam_forward(L[names.size()], L[names.size() + 1], p);
            // both outputs feed the scalarization through one tensor
            return add(ol, scale(or_, X(0.5)));
        });
    }
    if (name == "nafblock") {
        const int c = 2 * pick(rng, 2, 3);
        ParamStore<double> store;
        NafBlockParams<double>::add_to(store, "block", c, rng);
        std::vector<std::string> names;
        auto leaves = randomized(store, rng, names);
        const int h = pick(rng, 2, 5), w = pick(rng, 2, 5);
        leaves.push_back(draw(Shape{1, c, h, w}, rng));
        const PoolingPolicy pool =
            rng.coin() ? PoolingPolicy::global() : PoolingPolicy::local({pick(rng, 1, h), pick(rng, 1, w)});
        return make_case(leaves, [names, pool](const auto& L) {
            NAFSSR_X;
            const auto p = NafBlockParams<X>::view(rebuild(names, L), "block");
            return nafblock_forward(L[names.size()], p, DropDecision::inference(), pool);
        });
    }
    if (name == "nafssr_micro") {
        ModelConfig cfg;
        cfg.width = 8;
        cfg.blocks = 2;
        cfg.scam_count = 2;
        cfg.scale = 2;
        const ParamStore<double> store = build_model<double>(cfg, rng.next_u64());
        std::vector<std::string> names;
        auto leaves = randomized(store, rng, names);
        const Shape s{1, 3, 8, 24};
        const auto xl = draw(s, rng, 0, 1), xr = draw(s, rng, 0, 1);
        leaves.push_back(xl);
        leaves.push_back(xr);
        Tensor<double> hl, hr;
        {
            NoGradGuard guard;
            const auto [sl, sr] = model_forward(cfg, rebuild(names, leaves), xl, xr, ForwardOptions::eval());
            hl = offset_target(sl, rng);
            hr = offset_target(sr, rng);
        }
        return make_case(leaves, [cfg, names, hl, hr](const auto& L) {
            NAFSSR_X;
            const std::size_t k = names.size();
            const auto [sl, sr] = model_forward(cfg, rebuild(names, L), L[k], L[k + 1], ForwardOptions::eval());
            return l1_loss(sl, sr, cast<X>(hl), cast<X>(hr));
        });
    }
    throw std::invalid_argument("unknown gradcheck layer '" + name + "'");
}

#undef NAFSSR_X

// Backward pass at precision T against central differences of the 64-bit
// instantiation at the same (32-bit representable) point.
template <typename T>
double case_error(const GradCase& c, const std::function<Tensor<T>(const Leaves<T>&)>& f, Rng& rng, double eps) {
    Leaves<T> leaves;
    for (const auto& l : c.leaves) leaves.push_back(cast<T>(l).set_requires_grad(true));
    const Tensor<T> out = f(leaves);
    const Tensor<T> weights = random_uniform<T>(out.shape(), rng, -1, 1);
    sum(mul(out, weights)).backward();

    NoGradGuard guard;
    Leaves<double> probe;
    for (const auto& l : c.leaves) probe.push_back(l.detach().clone());
    const Tensor<double> w64 = cast<double>(weights);
    auto scalar = [&](const Tensor<double>&) {
        const Tensor<double> o = c.f64(probe);
        double acc = 0;
        for (std::size_t i = 0; i < o.numel(); ++i) acc += o.values()[i] * w64.values()[i];
        return acc;
    };
    double worst = 0;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        const Tensor<double> numeric = finite_diff_grad<double>(scalar, probe[k], eps);
        const auto analytic = leaves[k].grad();
        double diff = 0, norm_a = 0, norm_n = 0;
        for (std::size_t i = 0; i < numeric.numel(); ++i) {
            const double a = analytic.empty() ? 0.0 : double(analytic[i]), n = numeric.values()[i];
            diff = std::max(diff, std::abs(a - n));
            norm_a = std::max(norm_a, std::abs(a));
            norm_n = std::max(norm_n, std::abs(n));
        }
        worst = std::max(worst, diff / std::max({norm_a, norm_n, 1e-30}));
    }
    return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
    const double tol = gradcheck_tolerance(opts.precision);
    std::vector<GradCheckResult> results;
    for (const auto& name : gradcheck_layers()) {
        if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), name) == opts.only.end()) continue;
        GradCheckResult r{name, 0, tol, 0};
        const int configs = name == "nafssr_micro" ? std::min(opts.configs, 2) : opts.configs;
        for (int k = 0; k < configs; ++k) {
            Rng rng(opts.seed, "gradcheck/" + name, static_cast<std::uint64_t>(k));
            const GradCase c = build_case(name, rng);
            const double err = opts.precision == 64 ? case_error<double>(c, c.f64, rng, kNumericEps)
                                                    : case_error<float>(c, c.f32, rng, kNumericEps);
            r.max_rel_error = std::max(r.max_rel_error, err);
            ++r.configs;
        }
        results.push_back(r);
    }
    return results;
}

void print_gradcheck(std::ostream& os, const std::vector<GradCheckResult>& results) {
    char line[160];
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-30s configs %2d  worst rel err %.3e  tol %.0e  %s\n", r.name.c_str(),
                      r.configs, r.max_rel_error, r.tolerance, r.passed() ? "ok" : "FAIL");
        os << line;
    }
}

template Tensor<float> finite_diff_grad<float>(const std::function<double(const Tensor<float>&)>&,
                                               const Tensor<float>&, double);
template Tensor<double> finite_diff_grad<double>(const std::function<double(const Tensor<double>&)>&,
                                                 const Tensor<double>&, double);
template double gradient_error<float>(const std::vector<Tensor<float>>&, const std::function<Tensor<float>()>&,
                                      Rng&, double);
template double gradient_error<double>(const std::vector<Tensor<double>>&, const std::function<Tensor<double>()>&,
                                       Rng&, double);

}  // namespace nafssr
