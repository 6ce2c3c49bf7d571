#pragma once

#include <algorithm>
#include <cmath>

#include "nafssr/tensor.hpp"

namespace testing {

using nafssr::Rng;
using nafssr::Shape;
using nafssr::Tensor;

template <typename T>
Tensor<T> rand_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
    Rng rng(seed, "test");
    return nafssr::random_uniform<T>(s, rng, lo, hi);
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    const auto x = a.values(), y = b.values();
    return std::equal(x.begin(), x.end(), y.begin());
}

}  // namespace testing
