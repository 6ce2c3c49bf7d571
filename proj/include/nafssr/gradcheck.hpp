#pragma once

#include <functional>
#include <iosfwd>

#include "nafssr/model.hpp"

namespace nafssr {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps for every
/// element of x. x is perturbed in place and restored.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<double(const Tensor<T>&)>& f, const Tensor<T>& x, double eps);

/// Worst per-tensor error max|a - n| / max(|a|_inf, |n|_inf) between the
/// backward pass and central differences. `forward` must read the leaves
/// through their shared storage; its output is scalarized with fixed random
/// weights.
template <typename T>
double gradient_error(const std::vector<Tensor<T>>& leaves, const std::function<Tensor<T>()>& forward, Rng& rng,
                      double eps);

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0;
    double tolerance = 0;
    int configs = 0;

    bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
    int precision = 32;  // 32 or 64
    int configs = 3;     // random configurations per layer
    std::uint64_t seed = 1;
    std::vector<std::string> only;  // layer names to run; empty runs all
};

double gradcheck_tolerance(int precision);
/// Layer names in suite order.
const std::vector<std::string>& gradcheck_layers();
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts);
void print_gradcheck(std::ostream& os, const std::vector<GradCheckResult>& results);

}  // namespace nafssr
