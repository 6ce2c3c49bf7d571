#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nafssr {

/// Extent of a rank-4 (n, c, h, w) tensor.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    constexpr std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    constexpr std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
    std::string str() const;
};

/// Thrown when operand shapes violate an op's contract.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown for misuse of the gradient graph (non-scalar loss, consumed tape).
class GraphError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Thrown when a computation meets non-finite values it cannot accept.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Thread-local switch for graph recording. Inference paths turn it off so
/// parameters with requires_grad do not build graphs.
class GradMode {
  public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

/// Adjoint of a primitive. grad_in holds one slot per recorded input; a slot
/// is null when that input carries no gradient. Implementations accumulate.
template <typename T>
using AdjointFn =
    std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> grad_in)>;

template <typename T>
struct Node {
    std::string op;
    std::size_t numel = 0;
    std::vector<std::shared_ptr<Node>> inputs;  // null for inputs without gradient
    AdjointFn<T> adjoint;                       // empty for leaves
    std::vector<T> grad;
    bool leaf = false;
    bool consumed = false;
};

/// Dense (n, c, h, w) row-major tensor.
///
/// Copies are cheap handles onto the same storage and the same graph node, so
/// a parameter copied into a layer view still accumulates into one gradient.
/// Op results are never written after construction; `mutable_values` exists
/// for optimizers and finite-difference probes on leaves. `clone` gives an
/// independent deep copy.
template <typename T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor full(Shape shape, T v) { return Tensor(shape, v); }
    static Tensor of(Shape shape, std::initializer_list<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return shape_.numel(); }
    bool empty() const { return data_ == nullptr; }

    std::span<const T> values() const;
    std::span<T> mutable_values();
    const T* data() const { return data_ ? data_->data() : nullptr; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T at(int n, int c, int h, int w) const { return (*data_)[index(n, c, h, w)]; }
    T item() const;

    bool requires_grad() const { return node_ != nullptr; }
    /// Turns this handle into a gradient leaf (or drops graph linkage).
    Tensor& set_requires_grad(bool on);
    /// Gradient from the last backward pass; empty span if none was computed.
    std::span<const T> grad() const;
    Tensor grad_tensor() const;

    Tensor detach() const;
    Tensor clone() const;

    /// Reverse pass from a (1,1,1,1) loss through its recorded graph.
    void backward() const;

    const std::shared_ptr<Node<T>>& node() const { return node_; }

    /// Builds an op result. The adjoint is recorded only when grad mode is on
    /// and at least one input requires gradient.
    static Tensor make_result(Shape shape, std::vector<T> values, const char* op,
                              std::initializer_list<const Tensor*> inputs, AdjointFn<T> adjoint);

  private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<Node<T>> node_;
};

/// Topologically ordered record of the primitives reachable from a root:
/// every node appears after all of its inputs.
template <typename T>
class GradTape {
  public:
    static GradTape record(const std::shared_ptr<Node<T>>& root);

    std::size_t size() const { return order_.size(); }
    const std::vector<std::shared_ptr<Node<T>>>& order() const { return order_; }

    /// Zero-initializes every gradient, seeds the root with one and runs the
    /// adjoints in reverse order. Returns the number of adjoints invoked.
    std::size_t replay();

  private:
    std::vector<std::shared_ptr<Node<T>>> order_;
};

/// mt19937_64 with stream derivation and draws that do not depend on the
/// standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0);
    Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

    std::uint64_t next_u64();
    double uniform();                     // [0, 1)
    double uniform(double lo, double hi);
    double normal();
    std::uint64_t below(std::uint64_t bound);
    bool coin() { return (next_u64() >> 63) != 0; }

    std::string state() const;
    void set_state(const std::string& s);

  private:
    std::mt19937_64 engine_;
};

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo, double hi);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace nafssr
