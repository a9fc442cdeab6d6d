#pragma once

// Independent reimplementations used as test oracles. Nothing here calls
// into the tape or the kernels.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qtart/dataset.hpp"
#include "qtart/model.hpp"
#include "qtart/scoring.hpp"

namespace oracle {

using Real = long double;

/// Straight-line forward pass plus mean smoothed cross-entropy.
Real loss(const qtart::BasicModel<double>& model, std::span<const double> batch, std::size_t n,
          std::span<const int> labels, double smoothing);

/// Logits of the straight-line forward pass.
std::vector<Real> logits(const qtart::BasicModel<double>& model, std::span<const double> batch, std::size_t n);

struct GradCheck {
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares analytic parameter and input gradients against central
/// differences of `loss` with step `h`. Relative error uses the
/// denominator max(|a|, |b|, 1e-8).
GradCheck finite_difference_check(const qtart::BasicModel<double>& model, std::span<const double> batch,
                                  std::size_t n, std::span<const int> labels, double smoothing, double h = 1e-6);

/// Small seeded conv+dense+relu network with random biases and a random
/// input normalization, used by the gradient checks.
qtart::Model micro_net(std::uint64_t seed);

/// Planted-outlier fixture: N=1000, C=4, K=50 outliers at sigma 0.5 over
/// jitter 0.05, and a {8,16} conv net trained for `epochs` epochs with
/// SGD (lr 0.002, momentum 0.9, batch 64).
struct PlantedRun {
    qtart::Dataset train;
    qtart::Model model;
};
qtart::SyntheticSpec planted_spec(std::uint64_t seed);
qtart::ConvNetSpec planted_net(const qtart::Dataset& d);
PlantedRun train_planted(std::uint64_t seed, std::size_t epochs = 10);

/// Scoring used with the fixture: random projection to 48 dims, last-layer
/// window, noise seeded by `seed`.
qtart::ScoringConfig planted_scoring(std::uint64_t seed);

/// Removed set of the top-gamma values by full sort, ties to the lower index.
std::vector<std::size_t> top_gamma(std::span<const double> xi, std::size_t gamma);

/// Fraction (0..1) of planted outliers among the `gamma` samples with the
/// largest squared distance to their class mean in pixel space.
double noise_energy_recovery(const std::vector<float>& images, std::size_t stride, std::span<const int> labels,
                             std::size_t classes, std::span<const std::size_t> planted, std::size_t gamma);

}  // namespace oracle
