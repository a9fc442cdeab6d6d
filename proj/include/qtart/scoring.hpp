#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qtart/dataset.hpp"
#include "qtart/model.hpp"

namespace qtart {

/// Row-major matrix of doubles used for distance and instability tables.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::vector<double> column(std::size_t c) const;
};

// ---------------------------------------------------------------------------
// Noise injection

struct NoiseConfig {
    double sigma = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Writes the perturbation for the sample with original index `origin`.
/// One draw per sample per scoring run; applied once at the input.
using NoiseSource = std::function<void(std::size_t origin, std::span<float> out)>;

/// i.i.d. N(0, sigma^2) per element, seeded by (seed, origin).
NoiseSource gaussian_noise(const NoiseConfig& cfg);

struct Perturbed {
    Tensor noisy;
    Tensor delta;
};

/// x + delta for every row of a normalized batch; `origin` names each row.
Perturbed perturb(const Tensor& normalized, std::span<const std::size_t> origin, const NoiseSource& noise);
Perturbed perturb(const Tensor& normalized, std::span<const std::size_t> origin, const NoiseConfig& cfg);

// ---------------------------------------------------------------------------
// Projection H: (batch, O, h, w) -> (batch, O, P)

enum class ProjectionMethod { average_pool, random };

struct ProjectionConfig {
    std::size_t dims = 4;  // P
    ProjectionMethod method = ProjectionMethod::average_pool;
    std::uint64_t seed = 0;
};

std::string to_string(ProjectionMethod m);
ProjectionMethod parse_projection_method(const std::string& name);

/// A fixed projection operator for one spatial size. The random variant
/// uses an (h*w) x P matrix with N(0, 1/P) entries drawn from (seed, stream).
class Projector {
public:
    Projector(const ProjectionConfig& cfg, std::size_t spatial, std::uint64_t stream_id = 0);

    std::size_t dims() const { return dims_; }

    /// features (batch, O, h, w) with h*w == spatial -> (batch, O, P)
    Tensor apply(const Tensor& features) const;

private:
    ProjectionMethod method_;
    std::size_t spatial_;
    std::size_t dims_;
    std::vector<std::size_t> bin_start_;  // average-pool bins, size P + 1
    std::vector<float> matrix_;           // random: spatial x P
};

Tensor project(const Tensor& features, const ProjectionConfig& cfg, std::uint64_t stream_id = 0);

// ---------------------------------------------------------------------------
// Sensitivity-restricted filter subset

enum class ImportanceMetric { l1_norm, variance };

std::string to_string(ImportanceMetric m);
ImportanceMetric parse_importance_metric(const std::string& name);

/// Importance score per output filter of a conv2d layer.
std::vector<double> filter_importance(const Layer& conv, ImportanceMetric metric);

/// Indices of the k largest scores, ties to the lower index, in ascending
/// index order.
std::vector<std::size_t> top_k_filters(std::span<const double> importance, std::size_t k);

struct SensitivitySelection {
    ImportanceMetric metric = ImportanceMetric::l1_norm;
    std::vector<std::size_t> taps;                  // model layer index per scored layer
    std::vector<std::vector<std::size_t>> filters;  // kept filters per scored layer
};

/// `k_per_layer`: empty keeps every filter, one entry applies to all layers,
/// otherwise one entry per feature tap.
SensitivitySelection select_sensitive_filters(const Model& model, std::span<const std::size_t> k_per_layer,
                                              ImportanceMetric metric);

// ---------------------------------------------------------------------------
// Distances and instability

/// l2 distance over the projected dimension: (batch, O, P) x2 -> batch x O.
Matrix feature_distance(const Tensor& clean, const Tensor& noisy);

/// Channel-wise min-max normalization over samples. Degenerate channels
/// (max == min) map to zero. Requires at least two rows.
Matrix normalize_distances(const Matrix& distances);

/// Row mean over selected channels.
std::vector<double> layer_instability(const Matrix& normalized);

enum class WindowKind { last_layer, first_half, second_half, gaussian, custom };

std::string to_string(WindowKind k);
WindowKind parse_window_kind(const std::string& name);

struct WindowFunction {
    WindowKind kind = WindowKind::last_layer;
    std::vector<double> custom;  // used when kind == custom

    /// Layer multipliers alpha(1..L).
    std::vector<double> weights(std::size_t layers) const;
};

/// xi = Xi * alpha.
std::vector<double> aggregate(const Matrix& per_layer, std::span<const double> alpha);

/// Zeros at the gamma largest scores; ties remove the lower index first.
Mask compute_mask(std::span<const double> xi, std::size_t gamma, std::string source = {}, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// End-to-end scoring

struct ScoringConfig {
    NoiseConfig noise;
    ProjectionConfig projection;
    std::vector<std::size_t> filters_per_layer;  // see select_sensitive_filters
    ImportanceMetric metric = ImportanceMetric::l1_norm;
    WindowFunction window;
    std::size_t batch_size = 128;  // shard size; results do not depend on it

    /// Canonical text form; used for fingerprints.
    std::string describe() const;
};

struct InstabilityMatrix {
    Matrix per_layer;                // N x L
    std::vector<double> aggregated;  // N
    std::vector<std::size_t> origin; // original index per row
    std::string fingerprint;
};

/// Raw (un-normalized) distances Δf, one N x |Õ| matrix per scored layer.
std::vector<Matrix> raw_distances(const Model& model, const Dataset& d, const ScoringConfig& cfg,
                                  const SensitivitySelection& selection, const NoiseSource& noise);

/// normalize -> layer_instability -> aggregate over precomputed distances.
InstabilityMatrix instability_from_distances(const std::vector<Matrix>& distances, const WindowFunction& window);

/// Full pipeline over a pixel-space dataset; the model's normalization is
/// applied before the noise is added. `noise` overrides the Gaussian source.
InstabilityMatrix score_dataset(const Model& model, const Dataset& d, const ScoringConfig& cfg,
                                const NoiseSource* noise = nullptr);

/// Two-phase variant for large datasets: per-label mean distance picks the
/// `label_budget` labels with the largest values; full statistics and the
/// mask are then computed over samples of those labels only.
Mask two_phase_score(const Model& model, const Dataset& d, std::size_t label_budget, std::size_t gamma,
                     const ScoringConfig& cfg, const NoiseSource* noise = nullptr);

/// One line per sample: "index xi xi(1) ... xi(L)".
void write_instability_dump(const std::filesystem::path& path, const InstabilityMatrix& m);

}  // namespace qtart
