#pragma once

#include <span>
#include <vector>

#include "qtart/dataset.hpp"
#include "qtart/model.hpp"

namespace qtart {

/// Arg-max class per row of a (N, C) logits tensor; ties go to the lower class.
std::vector<int> argmax_rows(const Tensor& logits);

/// Predicted class for each image of a pixel-space batch.
std::vector<int> predict(const Model& model, const Tensor& batch);

/// Top-1 accuracy in percent.
double accuracy_percent(std::span<const int> predicted, std::span<const int> labels);

/// Top-1 accuracy of `model` on `d`, in percent.
double evaluate(const Model& model, const Dataset& d, std::size_t batch_size = 256);

}  // namespace qtart
