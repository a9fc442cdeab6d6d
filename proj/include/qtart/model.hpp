#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtart/normalization.hpp"
#include "qtart/tape.hpp"
#include "qtart/tensor.hpp"

namespace qtart {

enum class LayerKind : std::uint32_t { dense = 1, conv2d = 2, relu = 3, maxpool = 4, flatten = 5 };

const char* to_string(LayerKind kind);

template <typename T>
struct BasicLayer {
    LayerKind kind = LayerKind::relu;
    BasicTensor<T> weight;  // dense: (O, I); conv2d: (O, C, kh, kw)
    BasicTensor<T> bias;    // (O)
    std::size_t pad = 0;     // conv2d
    std::size_t window = 2;  // maxpool

    bool has_parameters() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    std::size_t out_channels() const { return has_parameters() ? weight.dim(0) : 0; }

    template <typename U>
    BasicLayer<U> cast() const {
        return BasicLayer<U>{kind, weight.template cast<U>(), bias.template cast<U>(), pad, window};
    }
};

struct InputSpec {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t size() const { return channels * height * width; }
    bool operator==(const InputSpec&) const = default;
};

/// Sequential classifier. Inputs are pixel-space batches (N, C, H, W); an
/// optional per-channel normalization is applied inside the model so that
/// input gradients are taken in pixel space.
template <typename T>
class BasicModel {
public:
    using TensorT = BasicTensor<T>;
    using LayerT = BasicLayer<T>;

    struct Output {
        TensorT logits;
        std::map<std::size_t, TensorT> features;  // keyed by layer index
    };

    struct Recording {
        Var input;
        Var logits;
        std::vector<Var> params;  // weight, bias per parameterized layer, in layer order
        std::map<std::size_t, Var> features;
    };

    BasicModel() = default;

    BasicModel(InputSpec input, std::size_t classes, std::vector<LayerT> layers, NormalizationStats norm = {})
        : input_(input), classes_(classes), layers_(std::move(layers)), norm_(std::move(norm)) {
        validate();
    }

    const InputSpec& input() const { return input_; }
    std::size_t classes() const { return classes_; }
    const std::vector<LayerT>& layers() const { return layers_; }
    std::vector<LayerT>& layers() { return layers_; }
    const NormalizationStats& normalization() const { return norm_; }

    void set_normalization(NormalizationStats norm) {
        norm.validate();
        if (!norm.empty() && norm.channels() != input_.channels) {
            throw std::invalid_argument("model: normalization has " + std::to_string(norm.channels()) +
                                        " channels, input has " + std::to_string(input_.channels));
        }
        norm_ = std::move(norm);
    }

    /// Layer indices whose post-activation output can be captured: every
    /// relu whose nearest preceding parameterized layer is a conv2d.
    std::vector<std::size_t> feature_taps() const {
        std::vector<std::size_t> taps;
        const LayerT* last_param = nullptr;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layers_[i].has_parameters()) {
                last_param = &layers_[i];
            } else if (layers_[i].kind == LayerKind::relu && last_param && last_param->kind == LayerKind::conv2d) {
                taps.push_back(i);
            }
        }
        return taps;
    }

    /// The conv2d layer whose activation is captured at `tap`.
    std::size_t conv_for_tap(std::size_t tap) const {
        for (std::size_t i = tap; i-- > 0;) {
            if (layers_[i].kind == LayerKind::conv2d) {
                return i;
            }
        }
        throw std::invalid_argument("model: layer " + std::to_string(tap) + " is not a feature tap");
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const LayerT& l : layers_) {
            if (l.has_parameters()) {
                n += l.weight.size() + l.bias.size();
            }
        }
        return n;
    }

    /// Parameter tensors in recording order (weight, bias per layer).
    std::vector<TensorT*> parameters() {
        std::vector<TensorT*> out;
        for (LayerT& l : layers_) {
            if (l.has_parameters()) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        }
        return out;
    }
    std::vector<const TensorT*> parameters() const {
        std::vector<const TensorT*> out;
        for (const LayerT& l : layers_) {
            if (l.has_parameters()) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        }
        return out;
    }

    /// Output shape of every layer for a batch of size n; throws a diagnostic
    /// naming the first layer whose input does not fit.
    std::vector<Shape> layer_shapes(std::size_t n) const {
        std::vector<Shape> shapes;
        Shape cur{n, input_.channels, input_.height, input_.width};
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerT& l = layers_[i];
            auto fail = [&](const std::string& what) {
                throw std::invalid_argument("layer " + std::to_string(i) + " (" + qtart::to_string(l.kind) +
                                            "): " + what + ", got input " + qtart::to_string(cur));
            };
            switch (l.kind) {
            case LayerKind::conv2d: {
                if (cur.size() != 4 || cur[1] != l.weight.dim(1)) {
                    fail("expects " + std::to_string(l.weight.dim(1)) + " input channels");
                }
                if (cur[2] + 2 * l.pad < l.weight.dim(2) || cur[3] + 2 * l.pad < l.weight.dim(3)) {
                    fail("kernel larger than padded input");
                }
                cur = {n, l.weight.dim(0), cur[2] + 2 * l.pad - l.weight.dim(2) + 1,
                       cur[3] + 2 * l.pad - l.weight.dim(3) + 1};
                break;
            }
            case LayerKind::dense:
                if (cur.size() != 2 || cur[1] != l.weight.dim(1)) {
                    fail("expects flat input of width " + std::to_string(l.weight.dim(1)));
                }
                cur = {n, l.weight.dim(0)};
                break;
            case LayerKind::maxpool:
                if (cur.size() != 4 || l.window == 0 || cur[2] < l.window || cur[3] < l.window) {
                    fail("window " + std::to_string(l.window) + " does not fit");
                }
                cur = {n, cur[1], cur[2] / l.window, cur[3] / l.window};
                break;
            case LayerKind::flatten:
                cur = {n, element_count(cur) / (n ? n : 1)};
                break;
            case LayerKind::relu:
                break;
            }
            shapes.push_back(cur);
        }
        return shapes;
    }

    void validate() const {
        if (classes_ == 0) {
            throw std::invalid_argument("model: class count must be positive");
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerT& l = layers_[i];
            if (!l.has_parameters()) {
                continue;
            }
            const std::size_t rank = l.kind == LayerKind::conv2d ? 4 : 2;
            if (l.weight.rank() != rank || l.weight.dim(0) == 0 || l.bias.shape != Shape{l.weight.dim(0)}) {
                throw std::invalid_argument("layer " + std::to_string(i) + " (" + qtart::to_string(l.kind) +
                                            "): bad parameter shapes " + qtart::to_string(l.weight.shape) + " / " +
                                            qtart::to_string(l.bias.shape));
            }
        }
        const auto shapes = layer_shapes(1);
        if (shapes.empty() || shapes.back() != Shape{1, classes_}) {
            throw std::invalid_argument("model: final output width does not equal class count " +
                                        std::to_string(classes_));
        }
        if (!norm_.empty()) {
            norm_.validate();
            if (norm_.channels() != input_.channels) {
                throw std::invalid_argument("model: normalization channel count mismatch");
            }
        }
    }

    /// Records the forward pass onto `tape`. With `normalized_input` the
    /// batch is taken to be already normalized and the model's normalization
    /// is skipped.
    Recording record(BasicTape<T>& tape, const TensorT& batch, bool input_grad, bool param_grad = true,
                     std::span<const std::size_t> capture = {}, bool normalized_input = false) const {
        check_batch(batch);
        const auto taps = feature_taps();
        for (std::size_t c : capture) {
            if (std::find(taps.begin(), taps.end(), c) == taps.end()) {
                throw std::invalid_argument("forward: layer " + std::to_string(c) + " is not a feature tap");
            }
        }
        Recording rec;
        rec.input = tape.leaf(batch, input_grad);
        Var cur = rec.input;
        if (!norm_.empty() && !normalized_input) {
            std::vector<T> mean(norm_.mean.begin(), norm_.mean.end());
            std::vector<T> stddev(norm_.stddev.begin(), norm_.stddev.end());
            cur = tape.normalize_channels(cur, std::move(mean), std::move(stddev));
        }
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const LayerT& l = layers_[i];
            switch (l.kind) {
            case LayerKind::conv2d: {
                const Var w = tape.leaf(l.weight, param_grad), b = tape.leaf(l.bias, param_grad);
                rec.params.push_back(w);
                rec.params.push_back(b);
                cur = tape.conv2d(cur, w, b, l.pad);
                break;
            }
            case LayerKind::dense: {
                const Var w = tape.leaf(l.weight, param_grad), b = tape.leaf(l.bias, param_grad);
                rec.params.push_back(w);
                rec.params.push_back(b);
                cur = tape.dense(cur, w, b);
                break;
            }
            case LayerKind::relu:
                cur = tape.relu(cur);
                break;
            case LayerKind::maxpool:
                cur = tape.maxpool(cur, l.window);
                break;
            case LayerKind::flatten:
                cur = tape.flatten(cur);
                break;
            }
            if (std::find(capture.begin(), capture.end(), i) != capture.end()) {
                rec.features[i] = cur;
            }
        }
        rec.logits = cur;
        return rec;
    }

    /// Inference pass without gradient recording. Safe to call concurrently.
    Output forward(const TensorT& batch, std::span<const std::size_t> capture = {},
                   bool normalized_input = false) const {
        BasicTape<T> tape;
        const Recording rec = record(tape, batch, false, false, capture, normalized_input);
        Output out;
        out.logits = tape.value(rec.logits);
        for (const auto& [layer, var] : rec.features) {
            out.features[layer] = tape.value(var);
        }
        return out;
    }

    template <typename U>
    BasicModel<U> cast() const {
        std::vector<BasicLayer<U>> layers;
        for (const LayerT& l : layers_) {
            layers.push_back(l.template cast<U>());
        }
        return BasicModel<U>(input_, classes_, std::move(layers), norm_);
    }

private:
    void check_batch(const TensorT& batch) const {
        if (batch.rank() != 4 || batch.dim(1) != input_.channels || batch.dim(2) != input_.height ||
            batch.dim(3) != input_.width) {
            throw std::invalid_argument("forward: batch shape " + qtart::to_string(batch.shape) +
                                        " does not match model input (N," + std::to_string(input_.channels) + "," +
                                        std::to_string(input_.height) + "," + std::to_string(input_.width) + ")");
        }
        layer_shapes(batch.dim(0));
    }

    InputSpec input_;
    std::size_t classes_ = 0;
    std::vector<LayerT> layers_;
    NormalizationStats norm_;
};

using Layer = BasicLayer<float>;
using Model = BasicModel<float>;

template <typename T>
struct LossGradients {
    double loss = 0.0;
    std::vector<std::vector<T>> params;  // aligned with BasicModel::parameters()
    std::vector<T> input;                // empty unless requested
};

/// Loss value and gradients of the (weighted, label-smoothed) cross-entropy.
template <typename T>
LossGradients<T> loss_gradients(const BasicModel<T>& model, const BasicTensor<T>& batch, std::span<const int> labels,
                                double smoothing = 0.0, std::span<const T> weights = {}, bool input_grad = false,
                                bool param_grad = true) {
    BasicTape<T> tape;
    const auto rec = model.record(tape, batch, input_grad, param_grad);
    const Var loss = tape.cross_entropy(rec.logits, labels, smoothing, weights);
    tape.backward(loss);
    LossGradients<T> out;
    out.loss = static_cast<double>(tape.value(loss)[0]);
    if (param_grad) {
        for (Var p : rec.params) {
            out.params.push_back(tape.grad(p));
        }
    }
    if (input_grad) {
        out.input = tape.grad(rec.input);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reference architectures

struct ConvNetSpec {
    InputSpec input{3, 16, 16};
    std::vector<std::size_t> channels{8, 16};  // one conv block per entry
    std::size_t kernel = 3;
    bool pool = true;                      // 2x2 max-pool after each block
    std::vector<std::size_t> hidden{};     // dense layers before the classifier
    std::size_t classes = 10;
};

/// conv -> relu [-> maxpool] blocks, then flatten and dense layers.
/// He-normal weights, zero biases.
Model make_conv_net(const ConvNetSpec& spec, std::uint64_t seed);

/// Flatten then dense/relu stack for (N, features, 1, 1) inputs.
Model make_mlp(std::size_t features, const std::vector<std::size_t>& hidden, std::size_t classes, std::uint64_t seed);

}  // namespace qtart
