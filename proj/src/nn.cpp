#include "nafssr/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace nafssr {

namespace fault_injection {
namespace {
bool flip_sg = false;
}
void set_flip_simple_gate_adjoint(bool on) { flip_sg = on; }
bool flip_simple_gate_adjoint() { return flip_sg; }
}  // namespace fault_injection

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void check_conv(const Tensor<T>& x, const ConvParams<T>& p) {
    const Shape ws = p.weight.shape();
    const int k = ws.h;
    if (ws.h != ws.w || (k != 1 && k != 3))
        throw ShapeError("conv2d: kernel must be 1x1 or 3x3, weight is " + ws.str());
    if (p.groups < 1 || ws.n % p.groups != 0)
        throw ShapeError("conv2d: groups must divide c_out, weight is " + ws.str());
    if (x.shape().c != ws.c * p.groups)
        throw ShapeError("conv2d: input has " + std::to_string(x.shape().c) + " channels, weight " + ws.str() +
                         " with groups=" + std::to_string(p.groups) + " expects " +
                         std::to_string(ws.c * p.groups));
    if (!p.bias.empty() && p.bias.shape() != Shape{1, ws.n, 1, 1})
        throw ShapeError("conv2d: bias must be (1," + std::to_string(ws.n) + ",1,1), got " + p.bias.shape().str());
}

// cols is (cin * k * k) x (h * w), zero outside the image.
template <typename T>
void im2col3(const T* in, int cin, int h, int w, T* cols) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < cin; ++c) {
        const T* plane = in + c * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    T* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(sy) * w;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int x = 0; x < x0; ++x) dst[x] = T(0);
                    for (int x = x0; x < x1; ++x) dst[x] = src[x + dx];
                    for (int x = std::max(x1, x0); x < w; ++x) dst[x] = T(0);
                }
            }
        }
    }
}

template <typename T>
void col2im3_add(const T* cols, int cin, int h, int w, T* out) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < cin; ++c) {
        T* plane = out + c * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                const int dy = ky - 1, dx = kx - 1;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const T* src = row + static_cast<std::size_t>(y) * w;
                    T* dst = plane + static_cast<std::size_t>(sy) * w;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int x = x0; x < x1; ++x) dst[x + dx] += src[x];
                }
            }
        }
    }
}

template <typename T>
void depthwise3_forward(const T* in, const T* wt, int h, int w, T* out) {
    for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
            const T k = wt[ky * 3 + kx];
            const int dy = ky - 1, dx = kx - 1;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
                T* o = out + static_cast<std::size_t>(y) * w;
                const T* s = in + static_cast<std::size_t>(y + dy) * w + dx;
                for (int x = x0; x < x1; ++x) o[x] += k * s[x];
            }
        }
    }
}

template <typename T>
void depthwise3_backward(const T* in, const T* wt, const T* g, int h, int w, T* gin, T* gw) {
    for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
            const T k = wt[ky * 3 + kx];
            const int dy = ky - 1, dx = kx - 1;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            double acc = 0;
            for (int y = y0; y < y1; ++y) {
                const T* go = g + static_cast<std::size_t>(y) * w;
                const std::size_t off = static_cast<std::size_t>(y + dy) * w + dx;
                if (gin) {
                    T* gi = gin + off;
                    for (int x = x0; x < x1; ++x) gi[x] += k * go[x];
                }
                if (gw) {
                    Eigen::Map<const ColVec<T>> a(go + x0, x1 - x0), b(in + off + x0, x1 - x0);
                    acc += a.dot(b);
                }
            }
            if (gw) gw[ky * 3 + kx] += static_cast<T>(acc);
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
    check_conv(x, p);
    const Shape xs = x.shape();
    const Shape ws = p.weight.shape();
    const int cout = ws.n, cin = xs.c, k = ws.h, groups = p.groups;
    const int cig = cin / groups, cog = cout / groups;
    const int h = xs.h, w = xs.w;
    const std::size_t hw = xs.plane();
    const Shape ys{xs.n, cout, h, w};
    std::vector<T> out(ys.numel(), T(0));
    const T* xv = x.data();
    const T* wv = p.weight.data();
    const bool has_bias = !p.bias.empty();
    const bool depthwise = k == 3 && groups == cin && groups == cout;
    const std::size_t krows = static_cast<std::size_t>(cig) * k * k;

    std::vector<T> cols;
    if (k == 3 && !depthwise) cols.resize(krows * hw);

    for (int n = 0; n < xs.n; ++n) {
        const T* xn = xv + static_cast<std::size_t>(n) * cin * hw;
        T* yn = out.data() + static_cast<std::size_t>(n) * cout * hw;
        if (depthwise) {
            for (int c = 0; c < cin; ++c) depthwise3_forward(xn + c * hw, wv + c * 9, h, w, yn + c * hw);
        } else {
            for (int g = 0; g < groups; ++g) {
                const T* src = xn + static_cast<std::size_t>(g) * cig * hw;
                if (k == 3) {
                    im2col3(src, cig, h, w, cols.data());
                    src = cols.data();
                }
                Eigen::Map<const RowMat<T>> W(wv + static_cast<std::size_t>(g) * cog * krows, cog, krows);
                Eigen::Map<const RowMat<T>> X(src, krows, hw);
                Eigen::Map<RowMat<T>> Y(yn + static_cast<std::size_t>(g) * cog * hw, cog, hw);
                Y.noalias() = W * X;
            }
        }
        if (has_bias) {
            const T* bv = p.bias.data();
            for (int c = 0; c < cout; ++c) {
                T* row = yn + c * hw;
                for (std::size_t i = 0; i < hw; ++i) row[i] += bv[c];
            }
        }
    }

    auto adjoint = [=, xd = x.detach(), wd = p.weight.detach()](std::span<const T> gsp,
                                                               std::span<std::vector<T>* const> gin) {
            std::vector<T>* gx = gin[0];
            std::vector<T>* gw = gin[1];
            std::vector<T>* gb = has_bias ? gin[2] : nullptr;
            const T* xv = xd.data();
            const T* wv = wd.data();
            const T* g = gsp.data();
            std::vector<T> cols, dcols;
            if (k == 3 && !depthwise) {
                cols.resize(krows * hw);
                dcols.resize(krows * hw);
            }
            for (int n = 0; n < xs.n; ++n) {
                const T* xn = xv + static_cast<std::size_t>(n) * cin * hw;
                const T* gn = g + static_cast<std::size_t>(n) * cout * hw;
                T* gxn = gx ? gx->data() + static_cast<std::size_t>(n) * cin * hw : nullptr;
                if (gb) {
                    for (int c = 0; c < cout; ++c) {
                        const T* row = gn + c * hw;
                        double acc = 0;
                        for (std::size_t i = 0; i < hw; ++i) acc += row[i];
                        (*gb)[c] += static_cast<T>(acc);
                    }
                }
                if (depthwise) {
                    for (int c = 0; c < cin; ++c)
                        depthwise3_backward(xn + c * hw, wv + c * 9, gn + c * hw, h, w, gxn ? gxn + c * hw : nullptr,
                                            gw ? gw->data() + c * 9 : nullptr);
                    continue;
                }
                for (int grp = 0; grp < groups; ++grp) {
                    const T* src = xn + static_cast<std::size_t>(grp) * cig * hw;
                    if (k == 3 && gw) {
                        im2col3(src, cig, h, w, cols.data());
                        src = cols.data();
                    }
                    Eigen::Map<const RowMat<T>> G(gn + static_cast<std::size_t>(grp) * cog * hw, cog, hw);
                    Eigen::Map<const RowMat<T>> W(wv + static_cast<std::size_t>(grp) * cog * krows, cog, krows);
                    if (gw) {
                        Eigen::Map<const RowMat<T>> X(src, krows, hw);
                        Eigen::Map<RowMat<T>> GW(gw->data() + static_cast<std::size_t>(grp) * cog * krows, cog, krows);
                        GW.noalias() += G * X.transpose();
                    }
                    if (gxn) {
                        T* gdst = gxn + static_cast<std::size_t>(grp) * cig * hw;
                        if (k == 1) {
                            Eigen::Map<RowMat<T>> GX(gdst, cig, hw);
                            GX.noalias() += W.transpose() * G;
                        } else {
                            Eigen::Map<RowMat<T>> DC(dcols.data(), krows, hw);
                            DC.noalias() = W.transpose() * G;
                            col2im3_add(dcols.data(), cig, h, w, gdst);
                        }
                    }
                }
            }
        };
    const char* name = depthwise ? "conv2d_dw" : "conv2d";
    if (has_bias) return Tensor<T>::make_result(ys, std::move(out), name, {&x, &p.weight, &p.bias}, std::move(adjoint));
    return Tensor<T>::make_result(ys, std::move(out), name, {&x, &p.weight}, std::move(adjoint));
}

template <typename T>
Tensor<T> layernorm2d(const Tensor<T>& x, const LayerNormParams<T>& p) {
    const Shape xs = x.shape();
    const Shape ps{1, xs.c, 1, 1};
    if (p.weight.shape() != ps || p.bias.shape() != ps)
        throw ShapeError("layernorm2d: parameters " + p.weight.shape().str() + "/" + p.bias.shape().str() +
                         " do not match input " + xs.str());
    const int C = xs.c;
    const std::size_t hw = xs.plane();
    const T* xv = x.data();
    const T* wv = p.weight.data();
    const T* bv = p.bias.data();
    std::vector<T> out(xs.numel());
    std::vector<T> xhat(xs.numel());
    std::vector<T> inv_std(static_cast<std::size_t>(xs.n) * hw);
    std::vector<double> mu(hw), var(hw);
    for (int n = 0; n < xs.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * C * hw;
        std::fill(mu.begin(), mu.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const T* row = xv + base + c * hw;
            for (std::size_t i = 0; i < hw; ++i) mu[i] += row[i];
        }
        for (std::size_t i = 0; i < hw; ++i) mu[i] /= C;
        for (int c = 0; c < C; ++c) {
            const T* row = xv + base + c * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = row[i] - mu[i];
                var[i] += d * d;
            }
        }
        T* is = inv_std.data() + static_cast<std::size_t>(n) * hw;
        for (std::size_t i = 0; i < hw; ++i) is[i] = static_cast<T>(1.0 / std::sqrt(var[i] / C + p.eps));
        for (int c = 0; c < C; ++c) {
            const T* row = xv + base + c * hw;
            T* xh = xhat.data() + base + c * hw;
            T* o = out.data() + base + c * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = static_cast<T>((row[i] - mu[i]) * is[i]);
                o[i] = xh[i] * wv[c] + bv[c];
            }
        }
    }
    return Tensor<T>::make_result(
        xs, std::move(out), "layernorm2d", {&x, &p.weight, &p.bias},
        [=, xh = std::move(xhat), is = std::move(inv_std), wd = p.weight.detach()](
            std::span<const T> gsp, std::span<std::vector<T>* const> gin) {
            const T* g = gsp.data();
            const T* wv = wd.data();
            std::vector<double> mg(hw), mgx(hw);
            for (int n = 0; n < xs.n; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * C * hw;
                for (int c = 0; c < C; ++c) {
                    const T* gr = g + base + c * hw;
                    const T* xr = xh.data() + base + c * hw;
                    if (gin[1] || gin[2]) {
                        double aw = 0, ab = 0;
                        for (std::size_t i = 0; i < hw; ++i) {
                            aw += double(gr[i]) * xr[i];
                            ab += gr[i];
                        }
                        if (gin[1]) (*gin[1])[c] += static_cast<T>(aw);
                        if (gin[2]) (*gin[2])[c] += static_cast<T>(ab);
                    }
                }
                if (!gin[0]) continue;
                std::fill(mg.begin(), mg.end(), 0.0);
                std::fill(mgx.begin(), mgx.end(), 0.0);
                for (int c = 0; c < C; ++c) {
                    const T* gr = g + base + c * hw;
                    const T* xr = xh.data() + base + c * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const double gh = double(gr[i]) * wv[c];
                        mg[i] += gh;
                        mgx[i] += gh * xr[i];
                    }
                }
                const T* isn = is.data() + static_cast<std::size_t>(n) * hw;
                for (int c = 0; c < C; ++c) {
                    const T* gr = g + base + c * hw;
                    const T* xr = xh.data() + base + c * hw;
                    T* gx = gin[0]->data() + base + c * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        const double gh = double(gr[i]) * wv[c];
                        gx[i] += static_cast<T>(isn[i] * (gh - mg[i] / C - xr[i] * mgx[i] / C));
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> simple_gate(const Tensor<T>& x) {
    const Shape xs = x.shape();
    if (xs.c % 2 != 0) throw ShapeError("simple_gate: odd channel count in " + xs.str());
    const int half = xs.c / 2;
    const std::size_t block = static_cast<std::size_t>(half) * xs.plane();
    const Shape ys{xs.n, half, xs.h, xs.w};
    std::vector<T> out(ys.numel());
    const T* xv = x.data();
    for (int n = 0; n < xs.n; ++n) {
        const T* a = xv + 2 * block * n;
        const T* b = a + block;
        T* o = out.data() + block * n;
        for (std::size_t i = 0; i < block; ++i) o[i] = a[i] * b[i];
    }
    const T sign = fault_injection::flip_simple_gate_adjoint() ? T(-1) : T(1);
    return Tensor<T>::make_result(ys, std::move(out), "simple_gate", {&x},
                                  [=, xd = x.detach()](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto& gx = *gin[0];
                                      const T* xv = xd.data();
                                      for (int n = 0; n < xs.n; ++n) {
                                          const std::size_t ia = 2 * block * n, ib = ia + block;
                                          const T* go = g.data() + block * n;
                                          for (std::size_t i = 0; i < block; ++i) {
                                              gx[ia + i] += sign * go[i] * xv[ib + i];
                                              gx[ib + i] += sign * go[i] * xv[ia + i];
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> simplified_channel_attention(const Tensor<T>& x, const ConvParams<T>& w, const PoolingPolicy& pool) {
    const int c = x.shape().c;
    if (w.kernel() != 1 || w.out_channels() != c || w.in_channels() != c || w.groups != 1)
        throw ShapeError("simplified_channel_attention: expects a 1x1 " + std::to_string(c) + "->" +
                         std::to_string(c) + " map, weight is " + w.weight.shape().str());
    const bool local = pool.mode == PoolingPolicy::Mode::local && !pool.covers(x.shape().h, x.shape().w);
    Tensor<T> stat = local ? local_avg_pool(x, pool.window) : global_avg_pool(x);
    return mul(x, conv2d(stat, w));
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int s) {
    const Shape xs = x.shape();
    if (s < 1 || xs.c % (s * s) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(xs.c) + " channels not divisible by s^2 for s=" +
                         std::to_string(s));
    const Shape ys{xs.n, xs.c / (s * s), xs.h * s, xs.w * s};
    auto src_index = [=](int n, int c, int i, int j, int y, int xx) {
        const int ci = c * s * s + i * s + j;
        return ((static_cast<std::size_t>(n) * xs.c + ci) * xs.h + y) * xs.w + xx;
    };
    auto for_each = [=](auto&& fn) {
        std::size_t o = 0;
        for (int n = 0; n < ys.n; ++n)
            for (int c = 0; c < ys.c; ++c)
                for (int oy = 0; oy < ys.h; ++oy)
                    for (int ox = 0; ox < ys.w; ++ox)
                        fn(o++, src_index(n, c, oy % s, ox % s, oy / s, ox / s));
    };
    std::vector<T> out(ys.numel());
    const T* xv = x.data();
    for_each([&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
    return Tensor<T>::make_result(ys, std::move(out), "pixel_shuffle", {&x},
                                  [for_each](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto& gx = *gin[0];
                                      for_each([&](std::size_t o, std::size_t i) { gx[i] += g[o]; });
                                  });
}

namespace {

struct LinearTap {
    int i0, i1;
    double l0, l1;
};

std::vector<LinearTap> bilinear_taps(int in, int out, int s) {
    std::vector<LinearTap> taps(out);
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) / s - 0.5;
        if (src < 0) src = 0;
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const int i1 = std::min(i0 + 1, in - 1);
        const double l1 = src - i0;
        taps[d] = {i0, i1, 1.0 - l1, l1};
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int s) {
    const Shape xs = x.shape();
    if (s < 1) throw ShapeError("bilinear_resize: factor must be >= 1");
    const Shape ys{xs.n, xs.c, xs.h * s, xs.w * s};
    const auto ty = bilinear_taps(xs.h, ys.h, s);
    const auto tx = bilinear_taps(xs.w, ys.w, s);
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    std::vector<T> out(ys.numel());
    const T* xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* in = xv + p * xs.plane();
        T* o = out.data() + p * ys.plane();
        for (int y = 0; y < ys.h; ++y) {
            const T* r0 = in + static_cast<std::size_t>(ty[y].i0) * xs.w;
            const T* r1 = in + static_cast<std::size_t>(ty[y].i1) * xs.w;
            const T a = static_cast<T>(ty[y].l0), b = static_cast<T>(ty[y].l1);
            for (int xx = 0; xx < ys.w; ++xx) {
                const LinearTap& t = tx[xx];
                const T c0 = static_cast<T>(t.l0), c1 = static_cast<T>(t.l1);
                o[static_cast<std::size_t>(y) * ys.w + xx] = a * (c0 * r0[t.i0] + c1 * r0[t.i1]) + b * (c0 * r1[t.i0] + c1 * r1[t.i1]);
            }
        }
    }
    return Tensor<T>::make_result(
        ys, std::move(out), "bilinear_resize", {&x},
        [=](std::span<const T> g, std::span<std::vector<T>* const> gin) {
            auto& gx = *gin[0];
            for (std::size_t p = 0; p < planes; ++p) {
                T* gi = gx.data() + p * xs.plane();
                const T* go = g.data() + p * ys.plane();
                for (int y = 0; y < ys.h; ++y) {
                    T* r0 = gi + static_cast<std::size_t>(ty[y].i0) * xs.w;
                    T* r1 = gi + static_cast<std::size_t>(ty[y].i1) * xs.w;
                    const T a = static_cast<T>(ty[y].l0), b = static_cast<T>(ty[y].l1);
                    for (int xx = 0; xx < ys.w; ++xx) {
                        const LinearTap& t = tx[xx];
                        const T v = go[static_cast<std::size_t>(y) * ys.w + xx];
                        const T c0 = static_cast<T>(t.l0), c1 = static_cast<T>(t.l1);
                        r0[t.i0] += a * c0 * v;
                        r0[t.i1] += a * c1 * v;
                        r1[t.i0] += b * c0 * v;
                        r1[t.i1] += b * c1 * v;
                    }
                }
            }
        });
}

#define NAFSSR_INSTANTIATE_NN(T)                                                                          \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                                \
    template Tensor<T> layernorm2d<T>(const Tensor<T>&, const LayerNormParams<T>&);                      \
    template Tensor<T> simple_gate<T>(const Tensor<T>&);                                                 \
    template Tensor<T> simplified_channel_attention<T>(const Tensor<T>&, const ConvParams<T>&,           \
                                                       const PoolingPolicy&);                            \
    template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, int);                                          \
    template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int);

NAFSSR_INSTANTIATE_NN(float)
NAFSSR_INSTANTIATE_NN(double)

}  // namespace nafssr
