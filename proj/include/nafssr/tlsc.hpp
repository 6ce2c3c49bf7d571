#pragma once

#include <utility>

#include "nafssr/tensor.hpp"

namespace nafssr {

/// Window of a local average pool, in feature pixels.
struct PoolWindow {
    int h = 0;
    int w = 0;
    friend constexpr bool operator==(const PoolWindow&, const PoolWindow&) = default;
};

/// How simplified channel attention pools its statistic. `global` is the
/// training-time behavior; `local` is the test-time local statistics
/// conversion and is never used while training.
struct PoolingPolicy {
    enum class Mode { global, local };
    Mode mode = Mode::global;
    PoolWindow window{};

    static PoolingPolicy global() { return {}; }
    static PoolingPolicy local(PoolWindow w);

    /// True when the window spans the whole (h, w) extent on both axes, in
    /// which case local pooling reduces to global pooling.
    bool covers(int h, int w) const;
    std::string str() const;
};

/// Mean over all spatial positions, shape (n, c, 1, 1).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Mean over the window centered at every position, clipped to the image
/// (edge positions average only their in-bounds region). Rows covered by the
/// window start at y - (kh - 1) / 2. An axis whose window is at least the
/// extent averages the whole axis. Same shape as x.
template <typename T>
Tensor<T> local_avg_pool(const Tensor<T>& x, PoolWindow window);

/// Pooling window derived from the training patch: 1.5x each side, rounded.
PoolWindow tlsc_window_from_patch(int patch_h, int patch_w);

}  // namespace nafssr
