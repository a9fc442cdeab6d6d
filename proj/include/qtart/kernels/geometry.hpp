#pragma once

#include <cstddef>

namespace qtart::kernels {

/// Stride-1 convolution with symmetric zero padding.
struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t in_channels = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t pad = 0;

    std::size_t out_h() const { return in_h + 2 * pad - kernel_h + 1; }
    std::size_t out_w() const { return in_w + 2 * pad - kernel_w + 1; }
    std::size_t in_plane() const { return in_h * in_w; }
    std::size_t out_plane() const { return out_h() * out_w(); }
    std::size_t filter_size() const { return in_channels * kernel_h * kernel_w; }
};

struct DenseGeometry {
    std::size_t batch = 0;
    std::size_t in_features = 0;
    std::size_t out_features = 0;
};

/// Non-overlapping k x k max pooling; trailing rows/columns that do not fill
/// a window are dropped.
struct PoolGeometry {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t window = 2;

    std::size_t out_h() const { return in_h / window; }
    std::size_t out_w() const { return in_w / window; }
};

}  // namespace qtart::kernels
