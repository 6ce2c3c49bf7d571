#include "nafssr/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace nafssr {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(shape), data_(std::make_shared<std::vector<T>>(shape.numel(), fill)) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ShapeError("negative extent in shape " + shape.str());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(shape), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (data_->size() != shape.numel())
        throw ShapeError("value count " + std::to_string(data_->size()) + " does not match shape " +
                         shape.str());
}

template <typename T>
Tensor<T> Tensor<T>::of(Shape shape, std::initializer_list<T> values) {
    return Tensor(shape, std::vector<T>(values));
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
    return (*data_)[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    if (!on) {
        node_.reset();
    } else if (!node_) {
        node_ = std::make_shared<Node<T>>();
        node_->op = "leaf";
        node_->numel = numel();
        node_->leaf = true;
    }
    return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!node_ || node_->grad.size() != numel()) return {};
    return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
    auto g = grad();
    if (g.empty()) return Tensor(shape_);
    return Tensor(shape_, std::vector<T>(g.begin(), g.end()));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = data_;
    return out;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    if (!data_) return Tensor();
    return Tensor(shape_, *data_);
}

template <typename T>
void Tensor<T>::backward() const {
    if (shape_ != Shape{1, 1, 1, 1})
        throw GraphError("backward requires a (1,1,1,1) loss, got " + shape_.str());
    if (!node_) throw GraphError("backward on a tensor without a recorded graph");
    if (node_->consumed) throw GraphError("backward on an already consumed tape");
    auto tape = GradTape<T>::record(node_);
    tape.replay();
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> values, const char* op,
                                 std::initializer_list<const Tensor*> inputs, AdjointFn<T> adjoint) {
    Tensor out(shape, std::move(values));
    if (!GradMode::enabled()) return out;
    bool any = false;
    for (const Tensor* in : inputs) any = any || in->requires_grad();
    if (!any) return out;
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    node->numel = shape.numel();
    node->inputs.reserve(inputs.size());
    for (const Tensor* in : inputs) node->inputs.push_back(in->node_);
    node->adjoint = std::move(adjoint);
    out.node_ = std::move(node);
    return out;
}

template <typename T>
GradTape<T> GradTape<T>::record(const std::shared_ptr<Node<T>>& root) {
    GradTape tape;
    if (!root) return tape;
    // Iterative post-order DFS: a node is emitted once all its inputs are.
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            auto child = node->inputs[next++];
            if (child && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
            continue;
        }
        tape.order_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

template <typename T>
std::size_t GradTape<T>::replay() {
    if (order_.empty()) return 0;
    for (auto& node : order_) node->grad.assign(node->numel, T(0));
    order_.back()->grad.assign(order_.back()->numel, T(1));
    std::size_t visited = 0;
    std::vector<std::vector<T>*> slots;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>& node = **it;
        if (node.leaf) continue;
        if (node.consumed || !node.adjoint) throw GraphError("tape contains a consumed node");
        slots.clear();
        for (auto& in : node.inputs) slots.push_back(in ? &in->grad : nullptr);
        node.adjoint(std::span<const T>(node.grad), std::span<std::vector<T>* const>(slots));
        ++visited;
    }
    for (auto& node : order_) {
        if (node->leaf) continue;
        node->adjoint = nullptr;
        node->inputs.clear();
        node->consumed = true;
    }
    return visited;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

Rng::Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index)
    : engine_(splitmix64(splitmix64(seed) ^ splitmix64(fnv1a(stream) + index))) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % bound);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw std::invalid_argument("malformed RNG state");
}

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>(shape, std::move(v));
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template Tensor<float> random_uniform<float>(Shape, Rng&, double, double);
template Tensor<double> random_uniform<double>(Shape, Rng&, double, double);

}  // namespace nafssr
