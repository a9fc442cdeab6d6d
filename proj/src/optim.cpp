#include "qtart/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qtart {

void OptimizerState::validate() const {
    if (!(learning_rate >= 0.0)) {
        throw std::invalid_argument("optimizer: learning rate must be non-negative");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw std::invalid_argument("optimizer: weight decay must be non-negative");
    }
}

void sgd_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const std::vector<float>> grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                                    std::to_string(grads.size()) + " gradients");
    }
    if (state.velocity.empty()) {
        for (const Tensor* p : params) {
            state.velocity.emplace_back(p->shape);
        }
    }
    if (state.velocity.size() != params.size()) {
        throw std::invalid_argument("sgd_step: velocity buffers do not match parameters");
    }
    const float lr = static_cast<float>(state.learning_rate);
    const float mu = static_cast<float>(state.momentum);
    const float decay = static_cast<float>(state.weight_decay);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = *params[k];
        Tensor& v = state.velocity[k];
        const std::vector<float>& g = grads[k];
        if (v.shape != w.shape || g.size() != w.size()) {
            throw std::invalid_argument("sgd_step: shape mismatch for parameter " + std::to_string(k) + " " +
                                        to_string(w.shape));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i] + decay * w[i];
            w[i] -= lr * v[i];
        }
    }
}

void sgd_step(OptimizerState& state, Model& model, std::span<const std::vector<float>> grads) {
    const std::vector<Tensor*> params = model.parameters();
    sgd_step(state, std::span<Tensor* const>(params), grads);
}

LrSchedule LrSchedule::constant(double lr) {
    LrSchedule s;
    s.kind = Kind::constant;
    s.base = lr;
    return s;
}

LrSchedule LrSchedule::step(double base, std::vector<std::size_t> milestones, double multiplier) {
    LrSchedule s;
    s.kind = Kind::step;
    s.base = base;
    s.milestones = std::move(milestones);
    s.multiplier = multiplier;
    return s;
}

LrSchedule LrSchedule::cyclic(double lr_min, double lr_max, std::size_t total_epochs) {
    LrSchedule s;
    s.kind = Kind::cyclic;
    s.lr_min = lr_min;
    s.lr_max = lr_max;
    s.total_epochs = total_epochs;
    return s;
}

double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t iteration, std::size_t iterations_per_epoch) {
    switch (schedule.kind) {
    case LrSchedule::Kind::constant:
        return schedule.base;
    case LrSchedule::Kind::step: {
        double lr = schedule.base;
        for (std::size_t m : schedule.milestones) {
            if (epoch >= m) {
                lr *= schedule.multiplier;
            }
        }
        return lr;
    }
    case LrSchedule::Kind::cyclic: {
        const double per_epoch = static_cast<double>(std::max<std::size_t>(iterations_per_epoch, 1));
        const double progress = (static_cast<double>(epoch) + static_cast<double>(iteration) / per_epoch) /
                                static_cast<double>(std::max<std::size_t>(schedule.total_epochs, 1));
        const double triangle = 1.0 - std::abs(2.0 * std::clamp(progress, 0.0, 1.0) - 1.0);
        return schedule.lr_min + (schedule.lr_max - schedule.lr_min) * triangle;
    }
    }
    return schedule.base;
}

std::string to_string(LrSchedule::Kind kind) {
    switch (kind) {
    case LrSchedule::Kind::constant:
        return "constant";
    case LrSchedule::Kind::step:
        return "step";
    case LrSchedule::Kind::cyclic:
        return "cyclic";
    }
    return "constant";
}

LrSchedule::Kind parse_schedule_kind(const std::string& name) {
    if (name == "constant") {
        return LrSchedule::Kind::constant;
    }
    if (name == "step") {
        return LrSchedule::Kind::step;
    }
    if (name == "cyclic") {
        return LrSchedule::Kind::cyclic;
    }
    throw std::invalid_argument("unknown schedule '" + name + "'");
}

}  // namespace qtart
