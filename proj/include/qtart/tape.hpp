#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qtart/kernels/parallel.hpp"
#include "qtart/tensor.hpp"

namespace qtart {

/// Handle to a value recorded on a tape.
struct Var {
    static constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::size_t id = none;
    bool valid() const { return id != none; }
};

/// Label-smoothed one-hot target: (1 - eps) * onehot(label) + eps / C.
inline std::vector<double> smoothed_target(int label, std::size_t classes, double smoothing) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw std::out_of_range("smoothed_target: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(classes) + ")");
    }
    std::vector<double> target(classes, smoothing / static_cast<double>(classes));
    target[static_cast<std::size_t>(label)] += 1.0 - smoothing;
    return target;
}

/// Numerically stable softmax of one row.
template <typename T>
std::vector<double> softmax(std::span<const T> logits) {
    double top = -std::numeric_limits<double>::infinity();
    for (T z : logits) {
        top = std::max(top, static_cast<double>(z));
    }
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        p[c] = std::exp(static_cast<double>(logits[c]) - top);
        total += p[c];
    }
    for (double& v : p) {
        v /= total;
    }
    return p;
}

/// Reverse-mode differentiation tape. Operations append nodes in evaluation
/// order; backward() walks them in reverse and accumulates gradients into
/// every node that (transitively) depends on a leaf requiring gradients.
template <typename T>
class BasicTape {
public:
    using TensorT = BasicTensor<T>;

    Var leaf(TensorT value, bool requires_grad) {
        return push(std::move(value), requires_grad, nullptr);
    }

    const TensorT& value(Var v) const { return node(v).value; }

    /// Gradient of the last backward() root with respect to `v`.
    const std::vector<T>& grad(Var v) const {
        const Node& n = node(v);
        if (!n.requires_grad) {
            throw std::logic_error("tape: gradient requested for a node that does not require it");
        }
        if (!backward_done_) {
            throw std::logic_error("tape: gradient requested before backward()");
        }
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        backward_done_ = false;
    }

    Var conv2d(Var x, Var w, Var b, std::size_t pad) {
        const TensorT& xv = value(x);
        const TensorT& wv = value(w);
        if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1)) {
            throw std::invalid_argument("conv2d: input " + to_string(xv.shape) + " incompatible with weight " +
                                        to_string(wv.shape));
        }
        kernels::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), pad};
        if (g.in_h + 2 * pad < g.kernel_h || g.in_w + 2 * pad < g.kernel_w) {
            throw std::invalid_argument("conv2d: kernel larger than padded input");
        }
        TensorT out({g.batch, g.out_channels, g.out_h(), g.out_w()});
        kernels::conv2d_forward<T>(g, xv.values(), wv.values(), value(b).values(), out.values());
        return push(std::move(out), needs(x) || needs(w) || needs(b), [x, w, b, g](BasicTape& t, const std::vector<T>& go) {
            std::span<T> gi = t.needs(x) ? std::span<T>(t.node(x).grad) : std::span<T>{};
            std::vector<T> scratch_w, scratch_b;
            std::span<T> gw = t.grad_or_scratch(w, scratch_w);
            std::span<T> gb = t.grad_or_scratch(b, scratch_b);
            kernels::conv2d_backward<T>(g, t.value(x).values(), t.value(w).values(), go, gi, gw, gb);
        });
    }

    Var dense(Var x, Var w, Var b) {
        const TensorT& xv = value(x);
        const TensorT& wv = value(w);
        if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
            throw std::invalid_argument("dense: input " + to_string(xv.shape) + " incompatible with weight " +
                                        to_string(wv.shape));
        }
        kernels::DenseGeometry g{xv.dim(0), xv.dim(1), wv.dim(0)};
        TensorT out({g.batch, g.out_features});
        kernels::dense_forward<T>(g, xv.values(), wv.values(), value(b).values(), out.values());
        return push(std::move(out), needs(x) || needs(w) || needs(b), [x, w, b, g](BasicTape& t, const std::vector<T>& go) {
            std::span<T> gi = t.needs(x) ? std::span<T>(t.node(x).grad) : std::span<T>{};
            std::vector<T> scratch_w, scratch_b;
            std::span<T> gw = t.grad_or_scratch(w, scratch_w);
            std::span<T> gb = t.grad_or_scratch(b, scratch_b);
            kernels::dense_backward<T>(g, t.value(x).values(), t.value(w).values(), go, gi, gw, gb);
        });
    }

    Var relu(Var x) {
        const TensorT& xv = value(x);
        TensorT out(xv.shape);
        kernels::relu_forward<T>(xv.values(), out.values());
        return push(std::move(out), needs(x), [x](BasicTape& t, const std::vector<T>& go) {
            kernels::relu_backward<T>(t.value(x).values(), go, t.node(x).grad);
        });
    }

    Var maxpool(Var x, std::size_t window) {
        const TensorT& xv = value(x);
        if (xv.rank() != 4 || window == 0 || xv.dim(2) < window || xv.dim(3) < window) {
            throw std::invalid_argument("maxpool: input " + to_string(xv.shape) + " too small for window " +
                                        std::to_string(window));
        }
        kernels::PoolGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), window};
        TensorT out({g.batch, g.channels, g.out_h(), g.out_w()});
        std::vector<std::size_t> argmax(out.size());
        kernels::maxpool_forward<T>(g, xv.values(), out.values(), argmax);
        return push(std::move(out), needs(x), [x, argmax = std::move(argmax)](BasicTape& t, const std::vector<T>& go) {
            kernels::maxpool_backward<T>(argmax, go, t.node(x).grad);
        });
    }

    Var flatten(Var x) {
        const TensorT& xv = value(x);
        TensorT out(Shape{xv.dim(0), xv.stride0()}, xv.data);
        return push(std::move(out), needs(x), [x](BasicTape& t, const std::vector<T>& go) {
            auto& gi = t.node(x).grad;
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] += go[i];
            }
        });
    }

    /// out[n,c,...] = (x[n,c,...] - mean[c]) / stddev[c]
    Var normalize_channels(Var x, std::vector<T> mean, std::vector<T> stddev) {
        const TensorT& xv = value(x);
        if (xv.rank() < 2 || xv.dim(1) != mean.size() || mean.size() != stddev.size()) {
            throw std::invalid_argument("normalize_channels: channel count mismatch for input " + to_string(xv.shape));
        }
        TensorT out(xv.shape);
        kernels::normalize_channels<T>(xv.values(), out.values(), xv.dim(1), xv.stride0() / xv.dim(1), mean, stddev);
        return push(std::move(out), needs(x), [x, stddev = std::move(stddev)](BasicTape& t, const std::vector<T>& go) {
            auto& gi = t.node(x).grad;
            const std::size_t channels = stddev.size();
            const std::size_t plane = t.value(x).stride0() / channels;
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] += go[i] / stddev[(i / plane) % channels];
            }
        });
    }

    Var add(Var a, Var b) {
        TensorT out = same_shape(a, b, "add");
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = value(a)[i] + value(b)[i];
        }
        return push(std::move(out), needs(a) || needs(b), [a, b](BasicTape& t, const std::vector<T>& go) {
            for (Var v : {a, b}) {
                if (t.needs(v)) {
                    auto& gv = t.node(v).grad;
                    for (std::size_t i = 0; i < go.size(); ++i) {
                        gv[i] += go[i];
                    }
                }
            }
        });
    }

    Var mul(Var a, Var b) {
        TensorT out = same_shape(a, b, "mul");
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = value(a)[i] * value(b)[i];
        }
        return push(std::move(out), needs(a) || needs(b), [a, b](BasicTape& t, const std::vector<T>& go) {
            if (t.needs(a)) {
                auto& ga = t.node(a).grad;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    ga[i] += go[i] * t.value(b)[i];
                }
            }
            if (t.needs(b)) {
                auto& gb = t.node(b).grad;
                for (std::size_t i = 0; i < go.size(); ++i) {
                    gb[i] += go[i] * t.value(a)[i];
                }
            }
        });
    }

    Var sum(Var x) {
        double total = 0.0;
        for (T v : value(x).data) {
            total += static_cast<double>(v);
        }
        TensorT out(Shape{1}, static_cast<T>(total));
        return push(std::move(out), needs(x), [x](BasicTape& t, const std::vector<T>& go) {
            for (T& g : t.node(x).grad) {
                g += go[0];
            }
        });
    }

    /// Weighted mean of per-sample label-smoothed cross-entropy:
    ///   sum_i w_i * l_i / sum_i w_i,  l_i = -sum_c y_ls[c] log softmax(z_i)[c].
    /// Empty `weights` means all ones. Zero-weight samples contribute nothing
    /// to the value or the gradient.
    Var cross_entropy(Var logits, std::span<const int> labels, double smoothing, std::span<const T> weights = {}) {
        const TensorT& z = value(logits);
        if (z.rank() != 2 || z.dim(0) != labels.size()) {
            throw std::invalid_argument("cross_entropy: logits " + to_string(z.shape) + " do not match " +
                                        std::to_string(labels.size()) + " labels");
        }
        if (!weights.empty() && weights.size() != labels.size()) {
            throw std::invalid_argument("cross_entropy: weight count does not match batch");
        }
        if (!(smoothing >= 0.0 && smoothing < 1.0)) {
            throw std::invalid_argument("cross_entropy: smoothing must lie in [0, 1)");
        }
        const std::size_t batch = z.dim(0), classes = z.dim(1);
        double weight_total = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
            weight_total += weights.empty() ? 1.0 : static_cast<double>(weights[i]);
        }
        if (weight_total <= 0.0) {
            throw std::invalid_argument("cross_entropy: all samples masked out");
        }
        // dL/dz cached at forward time; scaled by the upstream gradient later.
        std::vector<T> dz(z.size(), T{0});
        double loss = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
            const std::vector<double> target = smoothed_target(labels[i], classes, smoothing);
            const double w = weights.empty() ? 1.0 : static_cast<double>(weights[i]);
            if (w == 0.0) {
                continue;
            }
            const auto row = std::span<const T>(z.data).subspan(i * classes, classes);
            const std::vector<double> p = softmax(row);
            double sample = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                sample -= target[c] * std::log(p[c]);
                dz[i * classes + c] = static_cast<T>(w / weight_total * (p[c] - target[c]));
            }
            loss += w * sample;
        }
        TensorT out(Shape{1}, static_cast<T>(loss / weight_total));
        return push(std::move(out), needs(logits), [logits, dz = std::move(dz)](BasicTape& t, const std::vector<T>& go) {
            auto& gz = t.node(logits).grad;
            for (std::size_t i = 0; i < dz.size(); ++i) {
                gz[i] += go[0] * dz[i];
            }
        });
    }

    /// Backpropagates from a scalar root. Gradients of earlier calls are reset.
    void backward(Var root) {
        if (!root.valid() || root.id >= nodes_.size()) {
            throw std::logic_error("backward: root is not on this tape (was forward recorded?)");
        }
        if (nodes_[root.id].value.size() != 1) {
            throw std::logic_error("backward: root must be a scalar, got shape " +
                                   to_string(nodes_[root.id].value.shape));
        }
        for (Node& n : nodes_) {
            if (n.requires_grad) {
                n.grad.assign(n.value.size(), T{0});
            }
        }
        backward_done_ = true;
        if (!nodes_[root.id].requires_grad) {
            return;
        }
        nodes_[root.id].grad[0] = T{1};
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.requires_grad && n.backward) {
                n.backward(*this, n.grad);
            }
        }
    }

private:
    using BackwardFn = std::function<void(BasicTape&, const std::vector<T>&)>;

    struct Node {
        TensorT value;
        std::vector<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(TensorT value, bool requires_grad, BackwardFn fn) {
        backward_done_ = false;
        nodes_.push_back(Node{std::move(value), {}, requires_grad, requires_grad ? std::move(fn) : BackwardFn{}});
        return Var{nodes_.size() - 1};
    }

    Node& node(Var v) {
        if (!v.valid() || v.id >= nodes_.size()) {
            throw std::out_of_range("tape: unknown variable");
        }
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) {
            throw std::out_of_range("tape: unknown variable");
        }
        return nodes_[v.id];
    }

    bool needs(Var v) const { return node(v).requires_grad; }

    std::span<T> grad_or_scratch(Var v, std::vector<T>& scratch) {
        if (needs(v)) {
            return node(v).grad;
        }
        scratch.assign(value(v).size(), T{0});
        return scratch;
    }

    TensorT same_shape(Var a, Var b, const char* op) const {
        if (value(a).shape != value(b).shape) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(value(a).shape) + " vs " +
                                        to_string(value(b).shape));
        }
        return TensorT(value(a).shape);
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

using Tape = BasicTape<float>;

}  // namespace qtart
