#include "nafssr/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace nafssr {

template <typename T>
const Tensor<T>& ParamStore<T>::add(std::string name, Tensor<T> value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), {}, {}});
    return entries_.back().value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return entries_[it->second].value;
}

template <typename T>
ParamEntry<T>& ParamStore<T>::entry(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
    return entries_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.value.numel();
    return total;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
    ParamStore out;
    for (const auto& e : entries_) {
        out.add(e.name, e.value.clone());
        auto& dst = out.entries_.back();
        dst.exp_avg = e.exp_avg;
        dst.exp_avg_sq = e.exp_avg_sq;
    }
    return out;
}

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out, int k, int groups, Rng& rng) {
    const int fan_in = (c_in / groups) * k * k;
    const double bound = std::sqrt(1.0 / fan_in);
    store.add(prefix + ".weight", random_uniform<T>(Shape{c_out, c_in / groups, k, k}, rng, -bound, bound));
    store.add(prefix + ".bias", random_uniform<T>(Shape{1, c_out, 1, 1}, rng, -bound, bound));
}

template <typename T>
void add_layernorm(ParamStore<T>& store, const std::string& prefix, int c) {
    store.add(prefix + ".weight", Tensor<T>::full(Shape{1, c, 1, 1}, T(1)));
    store.add(prefix + ".bias", Tensor<T>::zeros(Shape{1, c, 1, 1}));
}

template <typename T>
ConvParams<T> conv_view(const ParamStore<T>& store, const std::string& prefix, int groups) {
    return {store.get(prefix + ".weight"), store.get(prefix + ".bias"), groups};
}

template <typename T>
LayerNormParams<T> layernorm_view(const ParamStore<T>& store, const std::string& prefix) {
    return {store.get(prefix + ".weight"), store.get(prefix + ".bias"), 1e-6};
}

template class ParamStore<float>;
template class ParamStore<double>;

#define NAFSSR_INSTANTIATE_STORE(T)                                                                    \
    template void add_conv<T>(ParamStore<T>&, const std::string&, int, int, int, int, Rng&);         \
    template void add_layernorm<T>(ParamStore<T>&, const std::string&, int);                          \
    template ConvParams<T> conv_view<T>(const ParamStore<T>&, const std::string&, int);               \
    template LayerNormParams<T> layernorm_view<T>(const ParamStore<T>&, const std::string&);

NAFSSR_INSTANTIATE_STORE(float)
NAFSSR_INSTANTIATE_STORE(double)

}  // namespace nafssr
