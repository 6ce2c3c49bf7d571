#include <cmath>

#include "doctest.h"
#include "nafssr/scam.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace nafssr;
using testing::bitwise_equal;
using testing::max_abs_diff;
using testing::rand_tensor;

namespace {

template <typename T>
void randomize(ParamStore<T>& store, std::uint64_t seed) {
    Rng rng(seed, "randomize");
    for (auto& e : store.entries())
        for (auto& v : e.value.mutable_values()) v = static_cast<T>(v + rng.uniform(-0.5, 0.5));
}

}  // namespace

TEST_CASE("block parameter counts follow the closed forms") {
    for (int c : {4, 16, 48, 96}) {
        Rng rng(1);
        ParamStore<float> a, b;
        NafBlockParams<float>::add_to(a, "b", c, rng);
        ScamParams<float>::add_to(b, "s", c, rng);
        CHECK(a.count() == 7u * c * c + 33u * c);
        CHECK(nafblock_param_count(c) == a.count());
        CHECK(b.count() == 4u * c * c + 10u * c);
        CHECK(scam_param_count(c) == b.count());
    }
}

TEST_CASE("fresh NAFBlock and SCAM are exact pass-throughs") {
    Rng rng(2);
    ParamStore<float> store;
    NafBlockParams<float>::add_to(store, "b", 8, rng);
    ScamParams<float>::add_to(store, "s", 8, rng);
    auto xl = rand_tensor<float>(Shape{2, 8, 5, 9}, 3);
    auto xr = rand_tensor<float>(Shape{2, 8, 5, 9}, 4);
    CHECK(bitwise_equal(nafblock_forward(xl, NafBlockParams<float>::view(store, "b"), DropDecision::inference()), xl));
    auto [ol, orr] = scam_forward(xl, xr, ScamParams<float>::view(store, "s"));
    CHECK(bitwise_equal(ol, xl));
    CHECK(bitwise_equal(orr, xr));
}

TEST_CASE("dropped units return their input") {
    Rng rng(3);
    ParamStore<double> store;
    NafBlockParams<double>::add_to(store, "b", 4, rng);
    randomize(store, 4);
    auto x = rand_tensor<double>(Shape{1, 4, 3, 3}, 5);
    CHECK(bitwise_equal(nafblock_forward(x, NafBlockParams<double>::view(store, "b"), DropDecision::dropped()), x));
}

TEST_CASE("kept units scale both residual branches by 1/(1-p)") {
    Rng rng(6);
    ParamStore<double> store;
    NafBlockParams<double>::add_to(store, "b", 4, rng);
    randomize(store, 7);
    auto p = NafBlockParams<double>::view(store, "b");
    auto x = rand_tensor<double>(Shape{1, 4, 3, 5}, 8);
    auto kept = nafblock_forward(x, p, DropDecision::kept(0.2));

    // Same block with the residual scales pre-multiplied.
    auto p2 = p;
    p2.beta = scale(p.beta.clone(), 1.25);
    p2.gamma_ffn = scale(p.gamma_ffn.clone(), 1.25);
    auto ref = nafblock_forward(x, p2, DropDecision::inference());
    CHECK(max_abs_diff(kept.values(), ref.values()) < 1e-12);
}

TEST_CASE("SCAM equals the two-pass oracle on random instances") {
    double worst = 0;
    for (int t = 0; t < 50; ++t) {
        Rng rng(100 + t, "shape");
        const int c = 2 + static_cast<int>(rng.below(5));
        const Shape s{1 + static_cast<int>(rng.below(2)), c, 1 + static_cast<int>(rng.below(4)),
                      2 + static_cast<int>(rng.below(9))};
        ParamStore<double> store;
        ScamParams<double>::add_to(store, "s", c, rng);
        randomize(store, 200 + t);
        const auto p = ScamParams<double>::view(store, "s");
        auto xl = rand_tensor<double>(s, 300 + t, -2, 2);
        auto xr = rand_tensor<double>(s, 400 + t, -2, 2);
        auto [ol, orr] = scam_forward(xl, xr, p);
        auto [nl, nr] = testing::naive_scam(xl, xr, p);
        worst = std::max({worst, max_abs_diff(ol.values(), nl.values()), max_abs_diff(orr.values(), nr.values())});
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("attention rows are distributions") {
    Rng rng(9);
    ParamStore<float> store;
    ScamParams<float>::add_to(store, "s", 6, rng);
    randomize(store, 10);
    auto xl = rand_tensor<float>(Shape{2, 6, 3, 11}, 11, -3, 3);
    auto xr = rand_tensor<float>(Shape{2, 6, 3, 11}, 12, -3, 3);
    const auto att = scam_attention(xl, xr, ScamParams<float>::view(store, "s"));
    for (const auto* m : {&att.right_to_left, &att.left_to_right}) {
        const auto v = m->values();
        for (std::size_t r = 0; r < v.size() / 11; ++r) {
            double s = 0;
            for (int j = 0; j < 11; ++j) {
                CHECK(v[r * 11 + j] >= 0);
                s += v[r * 11 + j];
            }
            CHECK(std::abs(s - 1) < 1e-5);
        }
    }
}

TEST_CASE("SCAM only mixes within an image row") {
    Rng rng(13);
    ParamStore<float> store;
    ScamParams<float>::add_to(store, "s", 4, rng);
    randomize(store, 14);
    const auto p = ScamParams<float>::view(store, "s");
    auto xl = rand_tensor<float>(Shape{1, 4, 5, 8}, 15);
    auto xr = rand_tensor<float>(Shape{1, 4, 5, 8}, 16);
    auto [ol, orr] = scam_forward(xl, xr, p);

    auto xr2 = xr.clone();
    for (int c = 0; c < 4; ++c)
        for (int w = 0; w < 8; ++w) xr2.mutable_values()[xr2.index(0, c, 2, w)] += 0.7f;
    auto [ol2, orr2] = scam_forward(xl, xr2, p);
    for (int c = 0; c < 4; ++c)
        for (int h = 0; h < 5; ++h)
            for (int w = 0; w < 8; ++w) {
                if (h == 2) continue;
                CHECK(ol2.at(0, c, h, w) == ol.at(0, c, h, w));
                CHECK(orr2.at(0, c, h, w) == orr.at(0, c, h, w));
            }
    bool row_changed = false;
    for (int w = 0; w < 8; ++w) row_changed |= ol2.at(0, 0, 2, w) != ol.at(0, 0, 2, w);
    CHECK(row_changed);
}

TEST_CASE("SCAM rejects mismatched views") {
    Rng rng(17);
    ParamStore<float> store;
    ScamParams<float>::add_to(store, "s", 4, rng);
    const auto p = ScamParams<float>::view(store, "s");
    CHECK_THROWS_AS(scam_forward(rand_tensor<float>(Shape{1, 4, 2, 3}, 1), rand_tensor<float>(Shape{1, 4, 2, 4}, 2), p),
                    ShapeError);
    CHECK_THROWS_AS(scam_forward(rand_tensor<float>(Shape{1, 3, 2, 3}, 1), rand_tensor<float>(Shape{1, 3, 2, 3}, 2), p),
                    ShapeError);
}
