#pragma once

// Serial reference kernels. Straight loops in textbook order; the parallel
// kernels are tested against these and the benchmark compares the two.

#include <cstddef>
#include <span>

#include "qtart/kernels/geometry.hpp"

namespace qtart::kernels::reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                    std::span<T> out) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    T acc = bias[o];
                    for (std::size_t c = 0; c < g.in_channels; ++c) {
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                                          static_cast<std::ptrdiff_t>(g.pad);
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                                          static_cast<std::ptrdiff_t>(g.pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                                    continue;
                                }
                                acc += in[((n * g.in_channels + c) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                                          static_cast<std::size_t>(ix)] *
                                       weight[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                            }
                        }
                    }
                    out[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
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
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const T go = grad_out[((n * g.out_channels + o) * oh + y) * ow + x];
                    grad_bias[o] += go;
                    for (std::size_t c = 0; c < g.in_channels; ++c) {
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) -
                                                          static_cast<std::ptrdiff_t>(g.pad);
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) -
                                                          static_cast<std::ptrdiff_t>(g.pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
                                    continue;
                                }
                                const std::size_t ii = ((n * g.in_channels + c) * g.in_h +
                                                        static_cast<std::size_t>(iy)) * g.in_w +
                                                       static_cast<std::size_t>(ix);
                                const std::size_t wi = ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx;
                                grad_weight[wi] += go * in[ii];
                                if (!grad_in.empty()) {
                                    grad_in[ii] += go * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight, std::span<const T> bias,
                   std::span<T> out) {
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_features; ++o) {
            T acc = bias[o];
            for (std::size_t i = 0; i < g.in_features; ++i) {
                acc += weight[o * g.in_features + i] * in[n * g.in_features + i];
            }
            out[n * g.out_features + o] = acc;
        }
    }
}

template <typename T>
void dense_backward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> grad_out, std::span<T> grad_in, std::span<T> grad_weight,
                    std::span<T> grad_bias) {
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t o = 0; o < g.out_features; ++o) {
            const T go = grad_out[n * g.out_features + o];
            grad_bias[o] += go;
            for (std::size_t i = 0; i < g.in_features; ++i) {
                grad_weight[o * g.in_features + i] += go * in[n * g.in_features + i];
                if (!grad_in.empty()) {
                    grad_in[n * g.in_features + i] += go * weight[o * g.in_features + i];
                }
            }
        }
    }
}

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = in[i] > T{0} ? in[i] : T{0};
    }
}

template <typename T>
void relu_backward(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_in) {
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] > T{0}) {
            grad_in[i] += grad_out[i];
        }
    }
}

/// `argmax` receives the flat input index selected for each output.
template <typename T>
void maxpool_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out, std::span<std::size_t> argmax) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t nc = 0; nc < g.batch * g.channels; ++nc) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                std::size_t best_i = (nc * g.in_h + y * g.window) * g.in_w + x * g.window;
                T best = in[best_i];
                for (std::size_t dy = 0; dy < g.window; ++dy) {
                    for (std::size_t dx = 0; dx < g.window; ++dx) {
                        const std::size_t i = (nc * g.in_h + y * g.window + dy) * g.in_w + x * g.window + dx;
                        if (in[i] > best) {
                            best = in[i];
                            best_i = i;
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
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        grad_in[argmax[i]] += grad_out[i];
    }
}

}  // namespace qtart::kernels::reference
