#include <cmath>

#include "doctest.h"
#include "nafssr/ops.hpp"
#include "support.hpp"

using namespace nafssr;
using testing::max_abs_diff;
using testing::rand_tensor;

TEST_CASE("tensor handles share storage and gradient, clone does not") {
    auto a = Tensor<double>::of(Shape{1, 1, 1, 3}, {1, 2, 3});
    auto b = a;
    b.mutable_values()[0] = 7;
    CHECK(a.at(0, 0, 0, 0) == 7);

    auto c = a.clone();
    c.mutable_values()[1] = -1;
    CHECK(a.at(0, 0, 0, 1) == 2);

    a.set_requires_grad(true);
    const Tensor<double> view = a;
    sum(mul(view, view)).backward();
    REQUIRE(a.grad().size() == 3);
    CHECK(a.grad()[0] == doctest::Approx(14));
    CHECK(a.grad()[2] == doctest::Approx(6));
}

TEST_CASE("construction rejects a value count that does not match the shape") {
    CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("backward needs a scalar root with a graph") {
    auto a = rand_tensor<double>(Shape{1, 2, 2, 2}, 1).set_requires_grad(true);
    CHECK_THROWS_AS(scale(a, 2.0).backward(), GraphError);
    auto plain = rand_tensor<double>(Shape{1, 1, 1, 1}, 2);
    CHECK_THROWS_AS(plain.backward(), GraphError);
}

TEST_CASE("no-grad mode records nothing") {
    auto a = rand_tensor<float>(Shape{1, 2, 3, 3}, 3);
    a.set_requires_grad(true);
    {
        NoGradGuard guard;
        CHECK_FALSE(add(a, a).requires_grad());
    }
    CHECK(add(a, a).requires_grad());
}

TEST_CASE("tape lists every node after its inputs") {
    auto a = rand_tensor<double>(Shape{1, 2, 2, 2}, 4).set_requires_grad(true);
    auto b = rand_tensor<double>(Shape{1, 2, 2, 2}, 5).set_requires_grad(true);
    auto loss = mean(mul(add(a, b), sub(a, b)));
    auto tape = GradTape<double>::record(loss.node());
    const auto& order = tape.order();
    for (std::size_t i = 0; i < order.size(); ++i)
        for (const auto& in : order[i]->inputs) {
            if (!in) continue;
            const auto pos = std::find(order.begin(), order.end(), in) - order.begin();
            CHECK(static_cast<std::size_t>(pos) < i);
        }
    CHECK(order.back() == loss.node());
}

TEST_CASE("elementwise broadcast over (1,c,1,1) and (n,c,1,1)") {
    const Shape xs{2, 3, 2, 4};
    auto x = rand_tensor<double>(xs, 6);
    auto b1 = rand_tensor<double>(Shape{1, 3, 1, 1}, 7);
    auto bn = rand_tensor<double>(Shape{2, 3, 1, 1}, 8);
    auto y1 = mul(x, b1);
    auto yn = sub(x, bn);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 4; ++w) {
                    CHECK(y1.at(n, c, h, w) == x.at(n, c, h, w) * b1.at(0, c, 0, 0));
                    CHECK(yn.at(n, c, h, w) == x.at(n, c, h, w) - bn.at(n, c, 0, 0));
                }
    CHECK_THROWS_AS(add(x, rand_tensor<double>(Shape{1, 3, 2, 1}, 9)), ShapeError);
}

TEST_CASE("softmax of [1, 2]") {
    auto y = softmax_lastdim(Tensor<double>::of(Shape{1, 1, 1, 2}, {1, 2}));
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    CHECK(y.at(0, 0, 0, 1) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("softmax stays finite for large logits") {
    auto y = softmax_lastdim(Tensor<float>::of(Shape{1, 1, 1, 3}, {1000, 1001, 999}));
    double s = 0;
    for (float v : y.values()) {
        CHECK(std::isfinite(v));
        s += v;
    }
    CHECK(s == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("batched row matmul against a naive loop") {
    auto a = rand_tensor<double>(Shape{2, 3, 4, 5}, 10);
    auto b = rand_tensor<double>(Shape{2, 3, 5, 6}, 11);
    auto y = batched_row_matmul(a, b);
    REQUIRE(y.shape() == Shape{2, 3, 4, 6});
    double err = 0;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 6; ++j) {
                    double acc = 0;
                    for (int k = 0; k < 5; ++k) acc += a.at(n, c, i, k) * b.at(n, c, k, j);
                    err = std::max(err, std::abs(acc - y.at(n, c, i, j)));
                }
    CHECK(err < 1e-12);
}

TEST_CASE("permute moves axes") {
    auto x = rand_tensor<float>(Shape{2, 3, 4, 5}, 12);
    auto y = permute(x, {0, 2, 3, 1});
    REQUIRE(y.shape() == Shape{2, 4, 5, 3});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w) CHECK(y.at(n, h, w, c) == x.at(n, c, h, w));
}

TEST_CASE("sum and mean accumulate in double") {
    Tensor<float> x(Shape{1, 1, 1, 1000}, 0.1f);
    CHECK(sum(x).item() == doctest::Approx(1000 * double(0.1f)).epsilon(1e-7));
    CHECK(mean(x).item() == doctest::Approx(double(0.1f)).epsilon(1e-7));
}

TEST_CASE("abs has zero subgradient at zero") {
    auto x = Tensor<double>::of(Shape{1, 1, 1, 3}, {-2, 0, 3}).set_requires_grad(true);
    sum(abs(x)).backward();
    CHECK(max_abs_diff(x.grad(), std::vector<double>{-1, 0, 1}) == 0);
}

TEST_CASE("concat and batch_item round trip") {
    auto a = rand_tensor<float>(Shape{1, 2, 3, 3}, 13);
    auto b = rand_tensor<float>(Shape{2, 2, 3, 3}, 14);
    std::vector<Tensor<float>> parts{a, b};
    auto c = concat_batch<float>(parts);
    REQUIRE(c.shape() == Shape{3, 2, 3, 3});
    CHECK(testing::bitwise_equal(batch_item(c, 0), a));
    CHECK(testing::bitwise_equal(batch_item(c, 2), batch_item(b, 1)));
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42, "init"), b(42, "init"), c(42, "drop"), d(42, "init", 1);
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
    CHECK(x != d.next_u64());

    Rng e(5);
    for (int i = 0; i < 10; ++i) e.uniform();
    const std::string saved = e.state();
    const double next = e.uniform();
    Rng f(0);
    f.set_state(saved);
    CHECK(f.uniform() == next);

    for (int i = 0; i < 1000; ++i) {
        const auto k = e.below(6);
        CHECK(k < 6);
        const double u = e.uniform(-2, 3);
        CHECK(u >= -2);
        CHECK(u < 3);
    }
}
