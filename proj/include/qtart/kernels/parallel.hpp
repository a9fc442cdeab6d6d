#pragma once

// OpenMP kernels used by the model. Each output element is owned by exactly
// one loop iteration and accumulated in a fixed order, so results do not
// depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <span>

#include "qtart/kernels/geometry.hpp"

namespace qtart::kernels {

namespace detail {

// Output rows/cols whose tap (offset k) lands inside the input.
inline std::size_t valid_begin(std::size_t k, std::size_t pad) { return pad > k ? pad - k : 0; }
inline std::size_t valid_end(std::size_t k, std::size_t pad, std::size_t in_extent, std::size_t out_extent) {
    const std::size_t limit = in_extent + pad;
    return limit > k ? std::min(out_extent, limit - k) : 0;
}

inline constexpr std::size_t min_parallel_work = 1 << 14;

}  // namespace detail

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t planes = g.batch * g.out_channels;
    const bool wide = planes * g.out_plane() * g.filter_size() >= detail::min_parallel_work;
#pragma omp parallel for schedule(static) if (wide)
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t n = p / g.out_channels, o = p % g.out_channels;
        T* dst = out.data() + p * oh * ow;
        std::fill(dst, dst + oh * ow, bias[o]);
        for (std::size_t c = 0; c < g.in_channels; ++c) {
            const T* src = in.data() + (n * g.in_channels + c) * g.in_plane();
            const T* w = weight.data() + (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                const std::size_t y0 = detail::valid_begin(ky, g.pad), y1 = detail::valid_end(ky, g.pad, g.in_h, oh);
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                    const T wv = w[ky * g.kernel_w + kx];
                    const std::size_t x0 = detail::valid_begin(kx, g.pad);
                    const std::size_t x1 = detail::valid_end(kx, g.pad, g.in_w, ow);
                    for (std::size_t y = y0; y < y1; ++y) {
                        const T* row = src + (y + ky - g.pad) * g.in_w;
                        T* drow = dst + y * ow;
                        for (std::size_t x = x0; x < x1; ++x) {
                            drow[x] += wv * row[x + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates into grad_in (if non-empty), grad_weight and grad_bias.
template <typename T>
void conv2d_backward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                     std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const bool wide = g.batch * g.out_channels * g.out_plane() * g.filter_size() >= detail::min_parallel_work;

    if (!grad_in.empty()) {
        const std::size_t planes = g.batch * g.in_channels;
#pragma omp parallel for schedule(static) if (wide)
        for (std::size_t p = 0; p < planes; ++p) {
            const std::size_t n = p / g.in_channels, c = p % g.in_channels;
            T* dst = grad_in.data() + p * g.in_plane();
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                const T* go = grad_out.data() + (n * g.out_channels + o) * oh * ow;
                const T* w = weight.data() + (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
                for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                    const std::size_t y0 = detail::valid_begin(ky, g.pad);
                    const std::size_t y1 = detail::valid_end(ky, g.pad, g.in_h, oh);
                    for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                        const T wv = w[ky * g.kernel_w + kx];
                        const std::size_t x0 = detail::valid_begin(kx, g.pad);
                        const std::size_t x1 = detail::valid_end(kx, g.pad, g.in_w, ow);
                        for (std::size_t y = y0; y < y1; ++y) {
                            T* drow = dst + (y + ky - g.pad) * g.in_w;
                            const T* grow = go + y * ow;
                            for (std::size_t x = x0; x < x1; ++x) {
                                drow[x + kx - g.pad] += wv * grow[x];
                            }
                        }
                    }
                }
            }
        }
    }

#pragma omp parallel for schedule(static) if (wide)
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        T bias_acc{0};
        for (std::size_t n = 0; n < g.batch; ++n) {
            const T* go = grad_out.data() + (n * g.out_channels + o) * oh * ow;
            for (std::size_t i = 0; i < oh * ow; ++i) {
                bias_acc += go[i];
            }
        }
        grad_bias[o] += bias_acc;
        for (std::size_t c = 0; c < g.in_channels; ++c) {
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                const std::size_t y0 = detail::valid_begin(ky, g.pad), y1 = detail::valid_end(ky, g.pad, g.in_h, oh);
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                    const std::size_t x0 = detail::valid_begin(kx, g.pad);
                    const std::size_t x1 = detail::valid_end(kx, g.pad, g.in_w, ow);
                    T acc{0};
                    for (std::size_t n = 0; n < g.batch; ++n) {
                        const T* go = grad_out.data() + (n * g.out_channels + o) * oh * ow;
                        const T* src = in.data() + (n * g.in_channels + c) * g.in_plane();
                        for (std::size_t y = y0; y < y1; ++y) {
                            const T* row = src + (y + ky - g.pad) * g.in_w;
                            const T* grow = go + y * ow;
                            for (std::size_t x = x0; x < x1; ++x) {
                                acc += grow[x] * row[x + kx - g.pad];
                            }
                        }
                    }
                    grad_weight[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] += acc;
                }
            }
        }
    }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out) {
    const bool wide = g.batch * g.in_features * g.out_features >= detail::min_parallel_work;
#pragma omp parallel for schedule(static) if (wide)
    for (std::size_t n = 0; n < g.batch; ++n) {
        const T* x = in.data() + n * g.in_features;
        for (std::size_t o = 0; o < g.out_features; ++o) {
            const T* w = weight.data() + o * g.in_features;
            T acc = bias[o];
            for (std::size_t i = 0; i < g.in_features; ++i) {
                acc += w[i] * x[i];
            }
            out[n * g.out_features + o] = acc;
        }
    }
}

template <typename T>
void dense_backward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                    std::span<T> grad_bias) {
    const bool wide = g.batch * g.in_features * g.out_features >= detail::min_parallel_work;
    if (!grad_in.empty()) {
#pragma omp parallel for schedule(static) if (wide)
        for (std::size_t n = 0; n < g.batch; ++n) {
            T* gi = grad_in.data() + n * g.in_features;
            for (std::size_t o = 0; o < g.out_features; ++o) {
                const T go = grad_out[n * g.out_features + o];
                const T* w = weight.data() + o * g.in_features;
                for (std::size_t i = 0; i < g.in_features; ++i) {
                    gi[i] += go * w[i];
                }
            }
        }
    }
#pragma omp parallel for schedule(static) if (wide)
    for (std::size_t o = 0; o < g.out_features; ++o) {
        T* gw = grad_weight.data() + o * g.in_features;
        T bias_acc{0};
        for (std::size_t n = 0; n < g.batch; ++n) {
            const T go = grad_out[n * g.out_features + o];
            const T* x = in.data() + n * g.in_features;
            bias_acc += go;
            for (std::size_t i = 0; i < g.in_features; ++i) {
                gw[i] += go * x[i];
            }
        }
        grad_bias[o] += bias_acc;
    }
}

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out) {
    const std::size_t n = in.size();
#pragma omp parallel for schedule(static) if (n >= detail::min_parallel_work)
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = in[i] > T{0} ? in[i] : T{0};
    }
}

template <typename T>
void relu_backward(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_in) {
    const std::size_t n = in.size();
#pragma omp parallel for schedule(static) if (n >= detail::min_parallel_work)
    for (std::size_t i = 0; i < n; ++i) {
        if (in[i] > T{0}) {
            grad_in[i] += grad_out[i];
        }
    }
}

template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::size_t> argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t planes = g.batch * g.channels;
#pragma omp parallel for schedule(static) if (planes * g.in_h * g.in_w >= detail::min_parallel_work)
    for (std::size_t nc = 0; nc < planes; ++nc) {
        const std::size_t base = nc * g.in_h * g.in_w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best_i = base + y * g.window * g.in_w + x * g.window;
                T best = in[best_i];
                for (std::size_t dy = 0; dy < g.window; ++dy) {
                    const std::size_t row = base + (y * g.window + dy) * g.in_w + x * g.window;
                    for (std::size_t dx = 0; dx < g.window; ++dx) {
                        if (in[row + dx] > best) {
                            best = in[row + dx];
                            best_i = row + dx;
                        }
                    }
                }
                out[(nc * oh + y) * ow + x] = best;
                argmax[(nc * oh + y) * ow + x] = best_i;
            }
        }
    }
}

template <typename T>
void maxpool_backward(std::span<const std::size_t> argmax, std::span<const T> grad_out, std::span<T> grad_in) {
    // Windows do not overlap, so scattered writes never collide.
    const std::size_t n = grad_out.size();
#pragma omp parallel for schedule(static) if (n >= detail::min_parallel_work)
    for (std::size_t i = 0; i < n; ++i) {
        grad_in[argmax[i]] += grad_out[i];
    }
}

/// out = (in - mean[c]) / stddev[c] over an (N, C, plane) layout.
template <typename T>
void normalize_channels(std::span<const T> in, std::span<T> out, std::size_t channels, std::size_t plane,
                        std::span<const T> mean, std::span<const T> stddev) {
    const std::size_t n = in.size();
#pragma omp parallel for schedule(static) if (n >= detail::min_parallel_work)
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = (i / plane) % channels;
        out[i] = (in[i] - mean[c]) / stddev[c];
    }
}

}  // namespace qtart::kernels
