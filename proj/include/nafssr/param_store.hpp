#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "nafssr/nn.hpp"

namespace nafssr {

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> value;
    std::vector<T> exp_avg;     // optimizer first moment, empty until the first step
    std::vector<T> exp_avg_sq;  // optimizer second moment
};

/// Named, insertion-ordered trainable tensors plus their optimizer slots.
template <typename T>
class ParamStore {
  public:
    /// Registers a new leaf; the stored tensor requires gradient.
    const Tensor<T>& add(std::string name, Tensor<T> value);

    bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
    const Tensor<T>& get(std::string_view name) const;
    ParamEntry<T>& entry(std::string_view name);

    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Total trainable scalar count.
    std::size_t count() const;

    /// Deep copy: same names and values, fresh leaves.
    ParamStore clone() const;
    /// Forgets gradients from earlier passes so parameters outside the next
    /// graph report none.
    void zero_grad() {
        for (auto& e : entries_)
            if (e.value.node()) e.value.node()->grad.clear();
    }

  private:
    std::vector<ParamEntry<T>> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

template <typename T>
std::size_t count_params(const ParamStore<T>& store) {
    return store.count();
}

/// Uniform in +-sqrt(1/fan_in) for weight and bias.
template <typename T>
void add_conv(ParamStore<T>& store, const std::string& prefix, int c_in, int c_out, int k, int groups, Rng& rng);

/// Weight ones, bias zeros.
template <typename T>
void add_layernorm(ParamStore<T>& store, const std::string& prefix, int c);

template <typename T>
ConvParams<T> conv_view(const ParamStore<T>& store, const std::string& prefix, int groups = 1);

template <typename T>
LayerNormParams<T> layernorm_view(const ParamStore<T>& store, const std::string& prefix);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace nafssr
