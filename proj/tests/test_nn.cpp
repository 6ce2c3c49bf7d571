#include <cmath>

#include "doctest.h"
#include "nafssr/nn.hpp"
#include "support.hpp"

using namespace nafssr;
using testing::max_abs_diff;
using testing::rand_tensor;

namespace {

// Direct zero-padded cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int groups) {
    const Shape xs = x.shape(), ws = w.shape();
    const int cout = ws.n, cig = ws.c, cog = cout / groups, k = ws.h, r = (k - 1) / 2;
    Tensor<double> y(Shape{xs.n, cout, xs.h, xs.w});
    auto out = y.mutable_values();
    for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < cout; ++o)
            for (int yy = 0; yy < xs.h; ++yy)
                for (int xx = 0; xx < xs.w; ++xx) {
                    double acc = b.empty() ? 0 : b.at(0, o, 0, 0);
                    const int g = o / cog;
                    for (int ci = 0; ci < cig; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sy = yy + ky - r, sx = xx + kx - r;
                                if (sy < 0 || sy >= xs.h || sx < 0 || sx >= xs.w) continue;
                                acc += w.at(o, ci, ky, kx) * x.at(n, g * cig + ci, sy, sx);
                            }
                    out[y.index(n, o, yy, xx)] = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("conv2d matches direct loops") {
    struct Case {
        int cin, cout, k, groups;
    };
    for (const Case c : {Case{3, 5, 3, 1}, Case{4, 6, 1, 1}, Case{4, 4, 3, 4}, Case{6, 4, 3, 2}}) {
        CAPTURE(c.cin);
        CAPTURE(c.k);
        CAPTURE(c.groups);
        auto x = rand_tensor<double>(Shape{2, c.cin, 5, 7}, 1);
        ConvParams<double> p;
        p.weight = rand_tensor<double>(Shape{c.cout, c.cin / c.groups, c.k, c.k}, 2);
        p.bias = rand_tensor<double>(Shape{1, c.cout, 1, 1}, 3);
        p.groups = c.groups;
        auto y = conv2d(x, p);
        auto ref = naive_conv(x, p.weight, p.bias, c.groups);
        CHECK(max_abs_diff(y.values(), ref.values()) < 1e-12);
    }
}

TEST_CASE("conv2d rejects mismatched shapes") {
    ConvParams<float> p;
    p.weight = rand_tensor<float>(Shape{4, 3, 3, 3}, 1);
    CHECK_THROWS_AS(conv2d(rand_tensor<float>(Shape{1, 2, 4, 4}, 2), p), ShapeError);
    p.weight = rand_tensor<float>(Shape{4, 3, 5, 5}, 1);
    CHECK_THROWS_AS(conv2d(rand_tensor<float>(Shape{1, 3, 8, 8}, 2), p), ShapeError);
}

TEST_CASE("layernorm2d normalizes across channels at each location") {
    auto x = rand_tensor<double>(Shape{2, 5, 3, 4}, 4);
    LayerNormParams<double> p;
    p.weight = rand_tensor<double>(Shape{1, 5, 1, 1}, 5);
    p.bias = rand_tensor<double>(Shape{1, 5, 1, 1}, 6);
    auto y = layernorm2d(x, p);
    double err = 0;
    for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 4; ++w) {
                double mu = 0, var = 0;
                for (int c = 0; c < 5; ++c) mu += x.at(n, c, h, w) / 5;
                for (int c = 0; c < 5; ++c) var += (x.at(n, c, h, w) - mu) * (x.at(n, c, h, w) - mu) / 5;
                for (int c = 0; c < 5; ++c) {
                    const double ref = (x.at(n, c, h, w) - mu) / std::sqrt(var + p.eps) * p.weight.at(0, c, 0, 0) +
                                       p.bias.at(0, c, 0, 0);
                    err = std::max(err, std::abs(ref - y.at(n, c, h, w)));
                }
            }
    CHECK(err < 1e-12);
}

TEST_CASE("simple gate multiplies the channel halves") {
    auto x = rand_tensor<float>(Shape{2, 6, 2, 3}, 7);
    auto y = simple_gate(x);
    REQUIRE(y.shape() == Shape{2, 3, 2, 3});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 3; ++w) CHECK(y.at(n, c, h, w) == x.at(n, c, h, w) * x.at(n, c + 3, h, w));
    CHECK_THROWS_AS(simple_gate(rand_tensor<float>(Shape{1, 3, 2, 2}, 8)), ShapeError);
}

TEST_CASE("simplified channel attention with global pooling") {
    auto x = rand_tensor<double>(Shape{2, 3, 4, 5}, 9);
    ConvParams<double> w;
    w.weight = rand_tensor<double>(Shape{3, 3, 1, 1}, 10);
    w.bias = rand_tensor<double>(Shape{1, 3, 1, 1}, 11);
    auto y = simplified_channel_attention(x, w, PoolingPolicy::global());
    double err = 0;
    for (int n = 0; n < 2; ++n) {
        double pooled[3] = {0, 0, 0};
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int ww = 0; ww < 5; ++ww) pooled[c] += x.at(n, c, h, ww) / 20;
        for (int o = 0; o < 3; ++o) {
            double a = w.bias.at(0, o, 0, 0);
            for (int c = 0; c < 3; ++c) a += w.weight.at(o, c, 0, 0) * pooled[c];
            for (int h = 0; h < 4; ++h)
                for (int ww = 0; ww < 5; ++ww) err = std::max(err, std::abs(x.at(n, o, h, ww) * a - y.at(n, o, h, ww)));
        }
    }
    CHECK(err < 1e-12);
}

TEST_CASE("pixel shuffle index mapping") {
    const int s = 2;
    auto x = rand_tensor<float>(Shape{1, 8, 3, 4}, 12);
    auto y = pixel_shuffle(x, s);
    REQUIRE(y.shape() == Shape{1, 2, 6, 8});
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 4; ++w)
                for (int i = 0; i < s; ++i)
                    for (int j = 0; j < s; ++j)
                        CHECK(y.at(0, c, h * s + i, w * s + j) == x.at(0, c * s * s + i * s + j, h, w));
    CHECK_THROWS_AS(pixel_shuffle(rand_tensor<float>(Shape{1, 6, 2, 2}, 1), 2), ShapeError);
}

TEST_CASE("bilinear x2 of a 2x2 grid") {
    auto x = Tensor<double>::of(Shape{1, 1, 2, 2}, {0, 1, 2, 3});
    auto y = bilinear_resize(x, 2);
    const std::vector<double> expected{0,   0.25, 0.75, 1,   0.5, 0.75, 1.25, 1.5,
                                       1.5, 1.75, 2.25, 2.5, 2,   2.25, 2.75, 3};
    CHECK(max_abs_diff(y.values(), expected) < 1e-15);
}

TEST_CASE("bilinear keeps constants and rejects bad factors") {
    Tensor<float> x(Shape{1, 3, 4, 6}, 0.3f);
    for (float v : bilinear_resize(x, 4).values()) CHECK(v == 0.3f);
    CHECK_THROWS(bilinear_resize(x, 0));
}

TEST_CASE("local average pool with clipped edges") {
    auto x = Tensor<double>::of(Shape{1, 1, 1, 4}, {1, 2, 3, 4});
    auto y = local_avg_pool(x, PoolWindow{1, 3});
    CHECK(max_abs_diff(y.values(), std::vector<double>{1.5, 2, 3, 3.5}) < 1e-15);
}

TEST_CASE("local pooling with a covering window equals global pooling") {
    auto x = rand_tensor<double>(Shape{2, 3, 5, 7}, 13);
    auto g = global_avg_pool(x);
    for (PoolWindow win : {PoolWindow{5, 7}, PoolWindow{11, 15}, PoolWindow{60, 150}}) {
        auto l = local_avg_pool(x, win);
        double err = 0;
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c)
                for (int h = 0; h < 5; ++h)
                    for (int w = 0; w < 7; ++w) err = std::max(err, std::abs(l.at(n, c, h, w) - g.at(n, c, 0, 0)));
        CHECK(err < 1e-12);
        CHECK(PoolingPolicy::local(win).covers(5, 7));
    }
    CHECK_FALSE(PoolingPolicy::local(PoolWindow{4, 7}).covers(5, 7));
}

TEST_CASE("local pool window with even size starts at y - (k-1)/2") {
    auto x = Tensor<double>::of(Shape{1, 1, 1, 5}, {1, 2, 4, 8, 16});
    auto y = local_avg_pool(x, PoolWindow{1, 2});
    // window covers columns [x, x + 1]
    CHECK(max_abs_diff(y.values(), std::vector<double>{1.5, 3, 6, 12, 16}) < 1e-15);
}

TEST_CASE("tlsc window is 1.5x the training patch") {
    CHECK(tlsc_window_from_patch(30, 90) == PoolWindow{45, 135});
    CHECK(tlsc_window_from_patch(40, 100) == PoolWindow{60, 150});
    CHECK_THROWS(tlsc_window_from_patch(0, 90));
}
