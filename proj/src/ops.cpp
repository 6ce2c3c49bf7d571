#include "nafssr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace nafssr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool per_channel_broadcast(const Shape& a, const Shape& b) {
    return b.c == a.c && b.h == 1 && b.w == 1 && (b.n == 1 || b.n == a.n);
}

}  // namespace

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, ElementwiseKind kind) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(sa.numel());

    if (sa == sb) {
        switch (kind) {
            case ElementwiseKind::add:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
                break;
            case ElementwiseKind::sub:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
                break;
            case ElementwiseKind::mul:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
                break;
        }
        const char* name = kind == ElementwiseKind::add ? "add" : kind == ElementwiseKind::sub ? "sub" : "mul";
        return Tensor<T>::make_result(
            sa, std::move(out), name, {&a, &b},
            [kind, ad = a.detach(), bd = b.detach()](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                const std::size_t n = g.size();
                if (auto* ga = gin[0]) {
                    if (kind == ElementwiseKind::mul) {
                        auto bv = bd.values();
                        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
                    }
                }
                if (auto* gb = gin[1]) {
                    if (kind == ElementwiseKind::mul) {
                        auto av = ad.values();
                        for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * av[i];
                    } else if (kind == ElementwiseKind::sub) {
                        for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i];
                    } else {
                        for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
                    }
                }
            });
    }

    if (!per_channel_broadcast(sa, sb))
        throw ShapeError("elementwise: cannot combine " + sa.str() + " with " + sb.str() +
                         " (operands must match or the second must be per-channel)");

    const std::size_t plane = sa.plane();
    const bool per_sample = sb.n == sa.n && sa.n > 1;
    auto bidx = [&](int n, int c) { return static_cast<std::size_t>(per_sample ? n : 0) * sb.c + c; };
    for (int n = 0; n < sa.n; ++n) {
        for (int c = 0; c < sa.c; ++c) {
            const T bb = bv[bidx(n, c)];
            const std::size_t base = (static_cast<std::size_t>(n) * sa.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const T x = av[base + p];
                out[base + p] = kind == ElementwiseKind::add ? x + bb : kind == ElementwiseKind::sub ? x - bb : x * bb;
            }
        }
    }
    const char* name = kind == ElementwiseKind::add ? "add_bc" : kind == ElementwiseKind::sub ? "sub_bc" : "mul_bc";
    return Tensor<T>::make_result(
        sa, std::move(out), name, {&a, &b},
        [kind, sa, sb, per_sample, ad = a.detach(), bd = b.detach()](std::span<const T> g,
                                                                      std::span<std::vector<T>* const> gin) {
            const std::size_t plane = sa.plane();
            auto av = ad.values();
            auto bv = bd.values();
            for (int n = 0; n < sa.n; ++n) {
                for (int c = 0; c < sa.c; ++c) {
                    const std::size_t bi = static_cast<std::size_t>(per_sample ? n : 0) * sb.c + c;
                    const std::size_t base = (static_cast<std::size_t>(n) * sa.c + c) * plane;
                    if (auto* ga = gin[0]) {
                        const T f = kind == ElementwiseKind::mul ? bv[bi] : T(1);
                        for (std::size_t p = 0; p < plane; ++p) (*ga)[base + p] += g[base + p] * f;
                    }
                    if (auto* gb = gin[1]) {
                        double acc = 0;
                        if (kind == ElementwiseKind::mul) {
                            for (std::size_t p = 0; p < plane; ++p) acc += double(g[base + p]) * av[base + p];
                        } else {
                            for (std::size_t p = 0; p < plane; ++p) acc += g[base + p];
                            if (kind == ElementwiseKind::sub) acc = -acc;
                        }
                        (*gb)[bi] += static_cast<T>(acc);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    return Tensor<T>::make_result(a.shape(), std::move(out), "scale", {&a},
                                  [factor](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto& ga = *gin[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                                  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(av[i]);
    return Tensor<T>::make_result(a.shape(), std::move(out), "abs", {&a},
                                  [ad = a.detach()](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto av = ad.values();
                                      auto& ga = *gin[0];
                                      for (std::size_t i = 0; i < g.size(); ++i) {
                                          const T x = av[i];
                                          ga[i] += x > 0 ? g[i] : x < 0 ? -g[i] : T(0);
                                      }
                                  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double acc = 0;
    for (T x : a.values()) acc += x;
    return Tensor<T>::make_result(Shape{1, 1, 1, 1}, {static_cast<T>(acc)}, "sum", {&a},
                                  [](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      for (auto& x : *gin[0]) x += g[0];
                                  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    if (n == 0) throw ShapeError("mean of an empty tensor");
    double acc = 0;
    for (T x : a.values()) acc += x;
    return Tensor<T>::make_result(Shape{1, 1, 1, 1}, {static_cast<T>(acc / double(n))}, "mean", {&a},
                                  [n](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      const T d = g[0] / static_cast<T>(n);
                                      for (auto& x : *gin[0]) x += d;
                                  });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    const Shape s = a.shape();
    const std::size_t w = static_cast<std::size_t>(s.w);
    const std::size_t rows = w == 0 ? 0 : a.numel() / w;
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * w;
        T* y = out.data() + r * w;
        T mx = x[0];
        for (std::size_t j = 0; j < w; ++j) {
            if (!std::isfinite(x[j])) throw NumericalError("softmax_lastdim: non-finite input");
            mx = std::max(mx, x[j]);
        }
        T total = 0;
        for (std::size_t j = 0; j < w; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < w; ++j) y[j] *= inv;
    }
    Tensor<T> probe(s, out);  // saved output for the adjoint
    return Tensor<T>::make_result(
        s, std::move(out), "softmax", {&a},
        [w, rows, yd = std::move(probe)](std::span<const T> g, std::span<std::vector<T>* const> gin) {
            auto yv = yd.values();
            auto& ga = *gin[0];
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = yv.data() + r * w;
                const T* gy = g.data() + r * w;
                T dot = 0;
                for (std::size_t j = 0; j < w; ++j) dot += gy[j] * y[j];
                for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += y[j] * (gy[j] - dot);
            }
        });
}

template <typename T>
Tensor<T> batched_row_matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n || sa.c != sb.c)
        throw ShapeError("batched_row_matmul: batch slices differ: " + sa.str() + " vs " + sb.str());
    if (sa.w != sb.h)
        throw ShapeError("batched_row_matmul: inner dimensions differ: " + sa.str() + " vs " + sb.str());
    const int m = sa.h, k = sa.w, p = sb.w;
    const Shape so{sa.n, sa.c, m, p};
    std::vector<T> out(so.numel());
    const std::size_t slices = static_cast<std::size_t>(sa.n) * sa.c;
    const std::size_t as = static_cast<std::size_t>(m) * k, bs = static_cast<std::size_t>(k) * p,
                      os = static_cast<std::size_t>(m) * p;
    for (std::size_t i = 0; i < slices; ++i) {
        Eigen::Map<const RowMat<T>> A(a.data() + i * as, m, k);
        Eigen::Map<const RowMat<T>> B(b.data() + i * bs, k, p);
        Eigen::Map<RowMat<T>> C(out.data() + i * os, m, p);
        C.noalias() = A * B;
    }
    return Tensor<T>::make_result(
        so, std::move(out), "batched_row_matmul", {&a, &b},
        [=, ad = a.detach(), bd = b.detach()](std::span<const T> g, std::span<std::vector<T>* const> gin) {
            for (std::size_t i = 0; i < slices; ++i) {
                Eigen::Map<const RowMat<T>> G(g.data() + i * os, m, p);
                if (auto* ga = gin[0]) {
                    Eigen::Map<const RowMat<T>> B(bd.data() + i * bs, k, p);
                    Eigen::Map<RowMat<T>> GA(ga->data() + i * as, m, k);
                    GA.noalias() += G * B.transpose();
                }
                if (auto* gb = gin[1]) {
                    Eigen::Map<const RowMat<T>> A(ad.data() + i * as, m, k);
                    Eigen::Map<RowMat<T>> GB(gb->data() + i * bs, k, p);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
}

namespace {

std::array<int, 4> dims_of(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

// out[o] = in[src(o)] for the permutation; when scatter is set, in[src(o)] += g[o].
template <typename T, typename Fn>
void for_each_permuted(const Shape& in_shape, std::array<int, 4> perm, Fn&& fn) {
    const auto d = dims_of(in_shape);
    std::array<std::size_t, 4> in_stride{static_cast<std::size_t>(d[1]) * d[2] * d[3],
                                         static_cast<std::size_t>(d[2]) * d[3], static_cast<std::size_t>(d[3]), 1};
    const std::array<int, 4> od{d[perm[0]], d[perm[1]], d[perm[2]], d[perm[3]]};
    const std::array<std::size_t, 4> s{in_stride[perm[0]], in_stride[perm[1]], in_stride[perm[2]],
                                       in_stride[perm[3]]};
    std::size_t o = 0;
    for (int i0 = 0; i0 < od[0]; ++i0)
        for (int i1 = 0; i1 < od[1]; ++i1)
            for (int i2 = 0; i2 < od[2]; ++i2) {
                const std::size_t base = i0 * s[0] + i1 * s[1] + i2 * s[2];
                for (int i3 = 0; i3 < od[3]; ++i3) fn(o++, base + i3 * s[3]);
            }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, std::array<int, 4> perm) {
    std::array<bool, 4> used{};
    for (int p : perm) {
        if (p < 0 || p > 3 || used[p]) throw ShapeError("permute: invalid axis permutation");
        used[p] = true;
    }
    const Shape si = a.shape();
    const auto d = dims_of(si);
    const Shape so{d[perm[0]], d[perm[1]], d[perm[2]], d[perm[3]]};
    std::vector<T> out(si.numel());
    auto av = a.values();
    for_each_permuted<T>(si, perm, [&](std::size_t o, std::size_t i) { out[o] = av[i]; });
    return Tensor<T>::make_result(so, std::move(out), "permute", {&a},
                                  [si, perm](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto& ga = *gin[0];
                                      for_each_permuted<T>(si, perm,
                                                           [&](std::size_t o, std::size_t i) { ga[i] += g[o]; });
                                  });
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
    if (parts.empty()) return Tensor<T>();
    Shape s = parts[0].shape();
    s.n = 0;
    std::vector<T> out;
    for (const auto& p : parts) {
        const Shape ps = p.shape();
        if (ps.c != s.c || ps.h != s.h || ps.w != s.w)
            throw ShapeError("concat_batch: " + ps.str() + " does not match " + parts[0].shape().str());
        s.n += ps.n;
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return Tensor<T>(s, std::move(out));
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& a, int i) {
    const Shape s = a.shape();
    if (i < 0 || i >= s.n) throw ShapeError("batch_item: index out of range for " + s.str());
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    auto v = a.values().subspan(per * i, per);
    return Tensor<T>(Shape{1, s.c, s.h, s.w}, std::vector<T>(v.begin(), v.end()));
}

#define NAFSSR_INSTANTIATE_OPS(T)                                                          \
    template Tensor<T> elementwise<T>(const Tensor<T>&, const Tensor<T>&, ElementwiseKind); \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
    template Tensor<T> abs<T>(const Tensor<T>&);                                           \
    template Tensor<T> sum<T>(const Tensor<T>&);                                           \
    template Tensor<T> mean<T>(const Tensor<T>&);                                          \
    template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                               \
    template Tensor<T> batched_row_matmul<T>(const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> permute<T>(const Tensor<T>&, std::array<int, 4>);                   \
    template Tensor<T> concat_batch<T>(std::span<const Tensor<T>>);                        \
    template Tensor<T> batch_item<T>(const Tensor<T>&, int);

NAFSSR_INSTANTIATE_OPS(float)
NAFSSR_INSTANTIATE_OPS(double)

}  // namespace nafssr
