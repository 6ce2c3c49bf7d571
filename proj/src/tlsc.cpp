#include "nafssr/tlsc.hpp"

#include <cmath>
#include <sstream>

namespace nafssr {

PoolingPolicy PoolingPolicy::local(PoolWindow w) {
    if (w.h <= 0 || w.w <= 0) throw std::invalid_argument("pooling window must be positive");
    return {Mode::local, w};
}

bool PoolingPolicy::covers(int h, int w) const {
    return mode == Mode::global || (window.h >= h && window.w >= w);
}

std::string PoolingPolicy::str() const {
    if (mode == Mode::global) return "global";
    std::ostringstream os;
    os << "local:" << window.h << 'x' << window.w;
    return os.str();
}

PoolWindow tlsc_window_from_patch(int patch_h, int patch_w) {
    if (patch_h <= 0 || patch_w <= 0) throw std::invalid_argument("training patch must be positive");
    return {static_cast<int>(std::lround(1.5 * patch_h)), static_cast<int>(std::lround(1.5 * patch_w))};
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape xs = x.shape();
    const std::size_t hw = xs.plane();
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    std::vector<T> out(planes);
    const T* xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += xv[p * hw + i];
        out[p] = static_cast<T>(acc / double(hw));
    }
    return Tensor<T>::make_result(Shape{xs.n, xs.c, 1, 1}, std::move(out), "global_avg_pool", {&x},
                                  [planes, hw](std::span<const T> g, std::span<std::vector<T>* const> gin) {
                                      auto& gx = *gin[0];
                                      for (std::size_t p = 0; p < planes; ++p) {
                                          const T d = static_cast<T>(double(g[p]) / double(hw));
                                          for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += d;
                                      }
                                  });
}

namespace {

// Inclusive [lo, hi] source range of the window at position q along one axis.
struct AxisWindow {
    int extent;
    int before;  // positions included before q
    int after;   // positions included after q
    bool full;

    AxisWindow(int extent_, int k) : extent(extent_), before((k - 1) / 2), after(k - 1 - (k - 1) / 2),
                                     full(k >= extent_) {}
    int lo(int q) const { return full ? 0 : std::max(0, q - before); }
    int hi(int q) const { return full ? extent - 1 : std::min(extent - 1, q + after); }
    // Positions q whose window contains p.
    int adj_lo(int p) const { return full ? 0 : std::max(0, p - after); }
    int adj_hi(int p) const { return full ? extent - 1 : std::min(extent - 1, p + before); }
};

// Box sums of one plane over per-position ranges, via a summed-area table.
template <typename T, typename LoY, typename HiY, typename LoX, typename HiX>
void box_sums(const T* in, int h, int w, std::vector<double>& table, LoY loy, HiY hiy, LoX lox, HiX hix,
              double* out) {
    table.assign(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    auto at = [&](int y, int x) -> double& { return table[static_cast<std::size_t>(y) * (w + 1) + x]; };
    for (int y = 0; y < h; ++y) {
        double row = 0;
        for (int x = 0; x < w; ++x) {
            row += in[static_cast<std::size_t>(y) * w + x];
            at(y + 1, x + 1) = at(y, x + 1) + row;
        }
    }
    for (int y = 0; y < h; ++y) {
        const int y0 = loy(y), y1 = hiy(y) + 1;
        for (int x = 0; x < w; ++x) {
            const int x0 = lox(x), x1 = hix(x) + 1;
            out[static_cast<std::size_t>(y) * w + x] = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> local_avg_pool(const Tensor<T>& x, PoolWindow window) {
    if (window.h <= 0 || window.w <= 0) throw std::invalid_argument("local_avg_pool: window must be positive");
    const Shape xs = x.shape();
    const AxisWindow ay(xs.h, window.h), ax(xs.w, window.w);
    const std::size_t hw = xs.plane();
    const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
    std::vector<double> count(hw);
    for (int y = 0; y < xs.h; ++y)
        for (int xx = 0; xx < xs.w; ++xx)
            count[static_cast<std::size_t>(y) * xs.w + xx] =
                double(ay.hi(y) - ay.lo(y) + 1) * double(ax.hi(xx) - ax.lo(xx) + 1);

    std::vector<T> out(xs.numel());
    std::vector<double> table, sums(hw);
    const T* xv = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        box_sums(
            xv + p * hw, xs.h, xs.w, table, [&](int q) { return ay.lo(q); }, [&](int q) { return ay.hi(q); },
            [&](int q) { return ax.lo(q); }, [&](int q) { return ax.hi(q); }, sums.data());
        for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = static_cast<T>(sums[i] / count[i]);
    }
    return Tensor<T>::make_result(
        xs, std::move(out), "local_avg_pool", {&x},
        [=](std::span<const T> g, std::span<std::vector<T>* const> gin) {
            auto& gx = *gin[0];
            std::vector<double> table, sums(hw);
            std::vector<double> scaled(hw);
            for (std::size_t p = 0; p < planes; ++p) {
                for (std::size_t i = 0; i < hw; ++i) scaled[i] = double(g[p * hw + i]) / count[i];
                box_sums(
                    scaled.data(), xs.h, xs.w, table, [&](int q) { return ay.adj_lo(q); },
                    [&](int q) { return ay.adj_hi(q); }, [&](int q) { return ax.adj_lo(q); },
                    [&](int q) { return ax.adj_hi(q); }, sums.data());
                for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += static_cast<T>(sums[i]);
            }
        });
}

template Tensor<float> global_avg_pool<float>(const Tensor<float>&);
template Tensor<double> global_avg_pool<double>(const Tensor<double>&);
template Tensor<float> local_avg_pool<float>(const Tensor<float>&, PoolWindow);
template Tensor<double> local_avg_pool<double>(const Tensor<double>&, PoolWindow);

}  // namespace nafssr
