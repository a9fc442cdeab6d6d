#include "qtart/model.hpp"

#include <cmath>

#include "qtart/rng.hpp"

namespace qtart {

const char* to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::dense:
        return "dense";
    case LayerKind::conv2d:
        return "conv2d";
    case LayerKind::relu:
        return "relu";
    case LayerKind::maxpool:
        return "maxpool";
    case LayerKind::flatten:
        return "flatten";
    }
    return "unknown";
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (float& v : t.data) {
        v = static_cast<float>(rng.normal(0.0, stddev));
    }
    return t;
}

Layer dense_layer(std::size_t in, std::size_t out, Rng& rng) {
    return Layer{LayerKind::dense, he_normal({out, in}, in, rng), Tensor(Shape{out}), 0, 2};
}

}  // namespace

Model make_conv_net(const ConvNetSpec& spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::weights));
    std::vector<Layer> layers;
    std::size_t channels = spec.input.channels, h = spec.input.height, w = spec.input.width;
    const std::size_t pad = spec.kernel / 2;
    for (std::size_t out : spec.channels) {
        const std::size_t fan_in = channels * spec.kernel * spec.kernel;
        layers.push_back(Layer{LayerKind::conv2d, he_normal({out, channels, spec.kernel, spec.kernel}, fan_in, rng),
                               Tensor(Shape{out}), pad, 2});
        layers.push_back(Layer{LayerKind::relu, {}, {}, 0, 2});
        channels = out;
        h = h + 2 * pad - spec.kernel + 1;
        w = w + 2 * pad - spec.kernel + 1;
        if (spec.pool && h >= 2 && w >= 2) {
            layers.push_back(Layer{LayerKind::maxpool, {}, {}, 0, 2});
            h /= 2;
            w /= 2;
        }
    }
    layers.push_back(Layer{LayerKind::flatten, {}, {}, 0, 2});
    std::size_t width = channels * h * w;
    for (std::size_t hidden : spec.hidden) {
        layers.push_back(dense_layer(width, hidden, rng));
        layers.push_back(Layer{LayerKind::relu, {}, {}, 0, 2});
        width = hidden;
    }
    layers.push_back(dense_layer(width, spec.classes, rng));
    return Model(spec.input, spec.classes, std::move(layers));
}

Model make_mlp(std::size_t features, const std::vector<std::size_t>& hidden, std::size_t classes, std::uint64_t seed) {
    Rng rng(derive_seed(seed, stream::weights));
    std::vector<Layer> layers;
    layers.push_back(Layer{LayerKind::flatten, {}, {}, 0, 2});
    std::size_t width = features;
    for (std::size_t h : hidden) {
        layers.push_back(dense_layer(width, h, rng));
        layers.push_back(Layer{LayerKind::relu, {}, {}, 0, 2});
        width = h;
    }
    layers.push_back(dense_layer(width, classes, rng));
    return Model(InputSpec{features, 1, 1}, classes, std::move(layers));
}

}  // namespace qtart
