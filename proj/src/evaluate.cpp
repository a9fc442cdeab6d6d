#include "qtart/evaluate.hpp"

#include <stdexcept>

namespace qtart {

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("argmax: logits must be (N, C), got " + to_string(logits.shape));
    }
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k) {
            if (logits[i * c + k] > logits[i * c + best]) {
                best = k;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict(const Model& model, const Tensor& batch) { return argmax_rows(model.forward(batch).logits); }

double accuracy_percent(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) {
        throw std::invalid_argument("accuracy: prediction and label counts differ");
    }
    if (labels.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predicted[i] == labels[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const Model& model, const Dataset& d, std::size_t batch_size) {
    const auto shards = batches(d.size(), batch_size, 0, 0, false);
    std::vector<int> predicted(d.size(), 0);
    const auto count = static_cast<std::ptrdiff_t>(shards.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < count; ++s) {
        const auto& rows = shards[static_cast<std::size_t>(s)];
        const auto p = predict(model, batch_images(d, rows));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            predicted[rows[i]] = p[i];
        }
    }
    return accuracy_percent(predicted, d.labels);
}

}  // namespace qtart
