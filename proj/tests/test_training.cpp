#include <cmath>
#include <limits>

#include "doctest.h"
#include "nafssr/training.hpp"
#include "support.hpp"

using namespace nafssr;
using testing::bitwise_equal;
using testing::max_abs_diff;
using testing::rand_tensor;

namespace {

std::vector<StereoSample> tiny_pool(int n, std::uint64_t seed) {
    std::vector<StereoSample> pool;
    for (int i = 0; i < n; ++i) {
        StereoSample s;
        s.hr_l = rand_tensor<float>(Shape{1, 3, 8, 16}, seed + 4 * i, 0, 1);
        s.hr_r = rand_tensor<float>(Shape{1, 3, 8, 16}, seed + 4 * i + 1, 0, 1);
        s.lr_l = bicubic_downsample(s.hr_l, 2);
        s.lr_r = bicubic_downsample(s.hr_r, 2);
        s.id = "p" + std::to_string(i);
        pool.push_back(s);
    }
    return pool;
}

ModelConfig micro() {
    ModelConfig m;
    m.width = 8;
    m.blocks = 2;
    m.scam_count = 1;
    m.scale = 2;
    return m;
}

TrainConfig quick() {
    TrainConfig c;
    c.iters = 10;
    c.batch = 2;
    c.patch_h = 4;
    c.patch_w = 8;
    c.seed = 3;
    c.drop_prob = 0.25;
    return c;
}

void check_same(const ParamStore<float>& a, const ParamStore<float>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CAPTURE(a.entries()[i].name);
        CHECK(bitwise_equal(a.entries()[i].value, b.entries()[i].value));
        CHECK(a.entries()[i].exp_avg == b.entries()[i].exp_avg);
        CHECK(a.entries()[i].exp_avg_sq == b.entries()[i].exp_avg_sq);
    }
}

}  // namespace

TEST_CASE("cosine schedule endpoints are exact") {
    TrainConfig c;
    c.iters = 1000;
    CHECK(cosine_lr(0, c) == 3e-3);
    CHECK(cosine_lr(1000, c) == 1e-7);
    CHECK(cosine_lr(500, c) == doctest::Approx((3e-3 + 1e-7) / 2).epsilon(1e-12));
    CHECK(cosine_lr(250, c) > cosine_lr(251, c));
}

TEST_CASE("l1 loss sums the per-view mean absolute errors") {
    auto a = Tensor<double>::of(Shape{1, 1, 1, 2}, {0, 1});
    auto b = Tensor<double>::of(Shape{1, 1, 1, 2}, {1, 1});
    auto c = Tensor<double>::of(Shape{1, 1, 1, 2}, {0.5, 0.25});
    CHECK(l1_loss(a, c, b, b).item() == doctest::Approx(0.5 + 0.625));
}

TEST_CASE("AdamW matches a hand-rolled update over five steps") {
    TrainConfig cfg;
    cfg.beta1 = 0.8;
    cfg.beta2 = 0.95;
    cfg.eps = 1e-6;
    cfg.weight_decay = 0.1;
    ParamStore<double> store;
    store.add("w", rand_tensor<double>(Shape{1, 2, 2, 2}, 1));
    const auto target = rand_tensor<double>(Shape{1, 2, 2, 2}, 2);

    std::vector<double> p(store.get("w").values().begin(), store.get("w").values().end());
    std::vector<double> m(8, 0.0), v(8, 0.0);
    for (int step = 1; step <= 5; ++step) {
        const double lr = 0.01 * step;
        store.zero_grad();
        sum(mul(sub(store.get("w"), target), sub(store.get("w"), target))).backward();
        REQUIRE(adamw_step(store, lr, cfg, step));
        for (int i = 0; i < 8; ++i) {
            const double g = 2 * (p[i] - target.values()[i]);
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
            const double mh = m[i] / (1 - std::pow(cfg.beta1, step));
            const double vh = v[i] / (1 - std::pow(cfg.beta2, step));
            p[i] = p[i] * (1 - lr * cfg.weight_decay) - lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
    CHECK(max_abs_diff(store.get("w").values(), p) < 1e-10);
}

TEST_CASE("a non-finite gradient rejects the whole step") {
    TrainConfig cfg;
    ParamStore<float> store;
    store.add("a", rand_tensor<float>(Shape{1, 1, 1, 3}, 1));
    store.add("b", rand_tensor<float>(Shape{1, 1, 1, 3}, 2));
    const auto before_a = store.get("a").clone(), before_b = store.get("b").clone();
    sum(add(store.get("a"), mul(store.get("b"), Tensor<float>(Shape{1, 1, 1, 3}, std::numeric_limits<float>::infinity()))))
        .backward();
    CHECK_FALSE(adamw_step(store, 1e-3, cfg, 1));
    CHECK(bitwise_equal(store.get("a"), before_a));
    CHECK(bitwise_equal(store.get("b"), before_b));
    CHECK(store.entry("a").exp_avg.empty());
}

TEST_CASE("parameters outside the graph are not updated") {
    TrainConfig cfg;
    ParamStore<float> store;
    store.add("used", rand_tensor<float>(Shape{1, 1, 1, 2}, 1));
    store.add("idle", rand_tensor<float>(Shape{1, 1, 1, 2}, 2));
    const auto idle = store.get("idle").clone();
    sum(store.get("used")).backward();
    REQUIRE(adamw_step(store, 1e-2, cfg, 1));
    CHECK(bitwise_equal(store.get("idle"), idle));
}

TEST_CASE("training config validation") {
    TrainConfig c;
    c.batch = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.drop_prob = 1.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("checkpoint bytes round trip and reject damage") {
    Trainer tr(quick(), micro(), tiny_pool(3, 10));
    for (int i = 0; i < 3; ++i) tr.step();
    const auto bytes = serialize_checkpoint(tr.state());
    const auto back = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(back) == bytes);
    CHECK(back.iteration == 3);
    CHECK(back.model == tr.model());
    check_same(back.params, tr.params());

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS(deserialize_checkpoint(bad));
    CHECK_THROWS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)));
    CHECK_THROWS(deserialize_checkpoint(bytes + "x"));
}

TEST_CASE("resuming from a checkpoint continues identically") {
    const auto pool = tiny_pool(5, 20);
    Trainer straight(quick(), micro(), pool);
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) losses.push_back(straight.step());

    Trainer first(quick(), micro(), pool);
    for (int i = 0; i < 5; ++i) first.step();
    Trainer resumed(quick(), deserialize_checkpoint(serialize_checkpoint(first.state())), pool);
    for (int i = 5; i < 10; ++i) CHECK(resumed.step() == losses[i]);
    check_same(resumed.params(), straight.params());
    CHECK(resumed.state().rng_state == straight.state().rng_state);
}

TEST_CASE("training is a pure function of the seed") {
    const auto pool = tiny_pool(4, 30);
    Trainer a(quick(), micro(), pool), b(quick(), micro(), pool);
    for (int i = 0; i < 4; ++i) CHECK(a.step() == b.step());
    auto other = quick();
    other.seed = 4;
    Trainer c(other, micro(), pool);
    for (int i = 0; i < 4; ++i) c.step();
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i)
        differs |= !bitwise_equal(a.params().entries()[i].value, c.params().entries()[i].value);
    CHECK(differs);
}

TEST_CASE("loss falls on a tiny fixed pool") {
    auto cfg = quick();
    cfg.iters = 60;
    cfg.drop_prob = 0;
    cfg.augment = AugmentationConfig{false, false, false};
    Trainer tr(cfg, micro(), tiny_pool(1, 40));
    const double first = tr.step();
    double last = first;
    for (int i = 1; i < 60; ++i) last = tr.step();
    CHECK(last < first);
}
