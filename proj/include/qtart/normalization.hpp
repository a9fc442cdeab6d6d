#pragma once

#include <stdexcept>
#include <vector>

namespace qtart {

/// Per-channel affine normalization: (x - mean[c]) / stddev[c].
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    std::size_t channels() const { return mean.size(); }
    bool empty() const { return mean.empty(); }

    void validate() const {
        if (mean.size() != stddev.size()) {
            throw std::invalid_argument("normalization: mean/std channel counts differ");
        }
        for (double s : stddev) {
            if (!(s > 0.0)) {
                throw std::invalid_argument("normalization: std entries must be positive");
            }
        }
    }

    static NormalizationStats identity(std::size_t channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }

    bool operator==(const NormalizationStats&) const = default;
};

}  // namespace qtart
