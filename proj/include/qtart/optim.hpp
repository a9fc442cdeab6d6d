#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qtart/model.hpp"

namespace qtart {

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + g + weight_decay * w
///   w <- w - lr * v
struct OptimizerState {
    double learning_rate = 0.1;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::vector<Tensor> velocity;  // lazily shaped to match the parameters

    void validate() const;
};

/// Applies one update in place. `grads` is aligned with `params`.
void sgd_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const std::vector<float>> grads);

/// Convenience overload updating every parameter of `model`.
void sgd_step(OptimizerState& state, Model& model, std::span<const std::vector<float>> grads);

/// Learning-rate schedules.
///  - step:   base * multiplier^(number of milestones <= epoch)
///  - cyclic: triangle lr_min -> lr_max -> lr_min over the whole run, evaluated
///            per iteration
struct LrSchedule {
    enum class Kind { constant, step, cyclic };
    Kind kind = Kind::constant;
    double base = 0.1;
    std::vector<std::size_t> milestones;
    double multiplier = 0.1;
    double lr_min = 0.0;
    double lr_max = 0.1;
    std::size_t total_epochs = 1;

    static LrSchedule constant(double lr);
    static LrSchedule step(double base, std::vector<std::size_t> milestones, double multiplier);
    static LrSchedule cyclic(double lr_min, double lr_max, std::size_t total_epochs);
};

/// Learning rate at `iteration` (0-based, may equal iterations_per_epoch to
/// denote the end of the epoch) of `epoch`.
double lr_at(const LrSchedule& schedule, std::size_t epoch, std::size_t iteration = 0,
             std::size_t iterations_per_epoch = 1);

std::string to_string(LrSchedule::Kind kind);
LrSchedule::Kind parse_schedule_kind(const std::string& name);

}  // namespace qtart
