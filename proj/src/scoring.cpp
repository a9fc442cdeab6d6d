#include "qtart/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qtart/kernels/parallel.hpp"
#include "qtart/rng.hpp"

namespace qtart {

std::vector<double> Matrix::column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = at(r, c);
    }
    return out;
}

void NoiseConfig::validate() const {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("noise: sigma must be positive");
    }
}

NoiseSource gaussian_noise(const NoiseConfig& cfg) {
    cfg.validate();
    return [cfg](std::size_t origin, std::span<float> out) {
        Rng rng(derive_seed(cfg.seed, stream::noise, origin));
        for (float& v : out) {
            v = static_cast<float>(rng.normal(0.0, cfg.sigma));
        }
    };
}

Perturbed perturb(const Tensor& normalized, std::span<const std::size_t> origin, const NoiseSource& noise) {
    if (normalized.rank() == 0 || normalized.dim(0) != origin.size()) {
        throw std::invalid_argument("perturb: origin list does not match batch");
    }
    Perturbed p{Tensor(normalized.shape), Tensor(normalized.shape)};
    const std::size_t stride = normalized.stride0();
    for (std::size_t i = 0; i < origin.size(); ++i) {
        std::span<float> delta(p.delta.data.data() + i * stride, stride);
        noise(origin[i], delta);
        for (std::size_t j = 0; j < stride; ++j) {
            p.noisy[i * stride + j] = normalized[i * stride + j] + delta[j];
        }
    }
    return p;
}

Perturbed perturb(const Tensor& normalized, std::span<const std::size_t> origin, const NoiseConfig& cfg) {
    return perturb(normalized, origin, gaussian_noise(cfg));
}

// ---------------------------------------------------------------------------

std::string to_string(ProjectionMethod m) {
    return m == ProjectionMethod::average_pool ? "average-pool" : "random";
}

ProjectionMethod parse_projection_method(const std::string& name) {
    if (name == "average-pool" || name == "spatial-average-pool") {
        return ProjectionMethod::average_pool;
    }
    if (name == "random" || name == "seeded-random-projection") {
        return ProjectionMethod::random;
    }
    throw std::invalid_argument("unknown projection method '" + name + "'");
}

Projector::Projector(const ProjectionConfig& cfg, std::size_t spatial, std::uint64_t stream_id)
    : method_(cfg.method), spatial_(spatial), dims_(cfg.dims) {
    if (dims_ == 0 || dims_ >= spatial_) {
        throw std::invalid_argument("projection: P=" + std::to_string(dims_) + " must satisfy 0 < P < h*w=" +
                                    std::to_string(spatial_));
    }
    if (method_ == ProjectionMethod::average_pool) {
        bin_start_.resize(dims_ + 1);
        for (std::size_t b = 0; b <= dims_; ++b) {
            bin_start_[b] = b * spatial_ / dims_;
        }
    } else {
        Rng rng(derive_seed(cfg.seed, stream::projection, stream_id));
        const double stddev = std::sqrt(1.0 / static_cast<double>(dims_));
        matrix_.resize(spatial_ * dims_);
        for (float& v : matrix_) {
            v = static_cast<float>(rng.normal(0.0, stddev));
        }
    }
}

Tensor Projector::apply(const Tensor& features) const {
    if (features.rank() < 3 || features.stride0() % spatial_ != 0 ||
        element_count(Shape(features.shape.begin() + 2, features.shape.end())) != spatial_) {
        throw std::invalid_argument("projection: feature shape " + to_string(features.shape) +
                                    " does not match spatial size " + std::to_string(spatial_));
    }
    const std::size_t batch = features.dim(0), channels = features.dim(1);
    Tensor out({batch, channels, dims_});
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const float* src = features.data.data() + bc * spatial_;
        float* dst = out.data.data() + bc * dims_;
        if (method_ == ProjectionMethod::average_pool) {
            for (std::size_t b = 0; b < dims_; ++b) {
                double sum = 0.0;
                for (std::size_t s = bin_start_[b]; s < bin_start_[b + 1]; ++s) {
                    sum += src[s];
                }
                dst[b] = static_cast<float>(sum / static_cast<double>(bin_start_[b + 1] - bin_start_[b]));
            }
        } else {
            for (std::size_t b = 0; b < dims_; ++b) {
                double sum = 0.0;
                for (std::size_t s = 0; s < spatial_; ++s) {
                    sum += static_cast<double>(src[s]) * matrix_[s * dims_ + b];
                }
                dst[b] = static_cast<float>(sum);
            }
        }
    }
    return out;
}

Tensor project(const Tensor& features, const ProjectionConfig& cfg, std::uint64_t stream_id) {
    if (features.rank() < 3) {
        throw std::invalid_argument("projection: features need (batch, channels, spatial...) layout");
    }
    const std::size_t spatial = element_count(Shape(features.shape.begin() + 2, features.shape.end()));
    return Projector(cfg, spatial, stream_id).apply(features);
}

// ---------------------------------------------------------------------------

std::string to_string(ImportanceMetric m) { return m == ImportanceMetric::l1_norm ? "l1-norm" : "variance"; }

ImportanceMetric parse_importance_metric(const std::string& name) {
    if (name == "l1-norm" || name == "weight-l1-norm") {
        return ImportanceMetric::l1_norm;
    }
    if (name == "variance" || name == "weight-variance") {
        return ImportanceMetric::variance;
    }
    throw std::invalid_argument("unknown importance metric '" + name + "'");
}

std::vector<double> filter_importance(const Layer& conv, ImportanceMetric metric) {
    if (conv.kind != LayerKind::conv2d) {
        throw std::invalid_argument("filter_importance: layer is not conv2d");
    }
    const std::size_t filters = conv.weight.dim(0);
    const std::size_t per = conv.weight.stride0();
    std::vector<double> score(filters, 0.0);
    for (std::size_t o = 0; o < filters; ++o) {
        const float* w = conv.weight.data.data() + o * per;
        if (metric == ImportanceMetric::l1_norm) {
            for (std::size_t i = 0; i < per; ++i) {
                score[o] += std::abs(static_cast<double>(w[i]));
            }
        } else {
            double mean = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                mean += w[i];
            }
            mean /= static_cast<double>(per);
            for (std::size_t i = 0; i < per; ++i) {
                score[o] += (w[i] - mean) * (w[i] - mean);
            }
            score[o] /= static_cast<double>(per);
        }
    }
    return score;
}

std::vector<std::size_t> top_k_filters(std::span<const double> importance, std::size_t k) {
    if (k == 0 || k > importance.size()) {
        throw std::invalid_argument("select filters: k=" + std::to_string(k) + " must lie in [1, " +
                                    std::to_string(importance.size()) + "]");
    }
    std::vector<std::size_t> order(importance.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

SensitivitySelection select_sensitive_filters(const Model& model, std::span<const std::size_t> k_per_layer,
                                              ImportanceMetric metric) {
    SensitivitySelection sel;
    sel.metric = metric;
    sel.taps = model.feature_taps();
    if (sel.taps.empty()) {
        throw std::invalid_argument("select filters: model has no convolutional feature taps");
    }
    if (k_per_layer.size() > 1 && k_per_layer.size() != sel.taps.size()) {
        throw std::invalid_argument("select filters: " + std::to_string(k_per_layer.size()) +
                                    " filter counts for " + std::to_string(sel.taps.size()) + " layers");
    }
    for (std::size_t t = 0; t < sel.taps.size(); ++t) {
        const Layer& conv = model.layers()[model.conv_for_tap(sel.taps[t])];
        const std::size_t filters = conv.out_channels();
        std::size_t k = filters;
        if (k_per_layer.size() == 1) {
            k = k_per_layer[0];
        } else if (!k_per_layer.empty()) {
            k = k_per_layer[t];
        }
        if (k > filters) {
            throw std::invalid_argument("select filters: k=" + std::to_string(k) + " exceeds " +
                                        std::to_string(filters) + " filters of layer " +
                                        std::to_string(model.conv_for_tap(sel.taps[t])));
        }
        const auto importance = filter_importance(conv, metric);
        sel.filters.push_back(top_k_filters(importance, k));
    }
    return sel;
}

// ---------------------------------------------------------------------------

Matrix feature_distance(const Tensor& clean, const Tensor& noisy) {
    if (clean.shape != noisy.shape || clean.rank() != 3) {
        throw std::invalid_argument("feature_distance: shapes " + to_string(clean.shape) + " and " +
                                    to_string(noisy.shape) + " must be equal (batch, O, P)");
    }
    const std::size_t batch = clean.dim(0), channels = clean.dim(1), dims = clean.dim(2);
    Matrix out(batch, channels);
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t m = 0; m < channels; ++m) {
            double sq = 0.0;
            const std::size_t base = (i * channels + m) * dims;
            for (std::size_t p = 0; p < dims; ++p) {
                const double diff = static_cast<double>(clean[base + p]) - static_cast<double>(noisy[base + p]);
                sq += diff * diff;
            }
            out.at(i, m) = std::sqrt(sq);
        }
    }
    return out;
}

Matrix normalize_distances(const Matrix& distances) {
    if (distances.rows < 2) {
        throw std::invalid_argument("normalize_distances: need at least 2 samples, got " +
                                    std::to_string(distances.rows));
    }
    Matrix out(distances.rows, distances.cols);
    for (std::size_t m = 0; m < distances.cols; ++m) {
        double lo = distances.at(0, m), hi = distances.at(0, m);
        for (std::size_t n = 1; n < distances.rows; ++n) {
            lo = std::min(lo, distances.at(n, m));
            hi = std::max(hi, distances.at(n, m));
        }
        const double range = hi - lo;
        for (std::size_t n = 0; n < distances.rows; ++n) {
            out.at(n, m) = range > 0.0 ? (distances.at(n, m) - lo) / range : 0.0;
        }
    }
    return out;
}

std::vector<double> layer_instability(const Matrix& normalized) {
    if (normalized.cols == 0) {
        throw std::invalid_argument("layer_instability: no channels selected");
    }
    std::vector<double> xi(normalized.rows, 0.0);
    for (std::size_t i = 0; i < normalized.rows; ++i) {
        double sum = 0.0;
        for (std::size_t m = 0; m < normalized.cols; ++m) {
            sum += normalized.at(i, m);
        }
        xi[i] = sum / static_cast<double>(normalized.cols);
    }
    return xi;
}

std::string to_string(WindowKind k) {
    switch (k) {
    case WindowKind::last_layer:
        return "last-layer";
    case WindowKind::first_half:
        return "first-half";
    case WindowKind::second_half:
        return "second-half";
    case WindowKind::gaussian:
        return "gaussian";
    case WindowKind::custom:
        return "custom";
    }
    return "last-layer";
}

WindowKind parse_window_kind(const std::string& name) {
    for (WindowKind k : {WindowKind::last_layer, WindowKind::first_half, WindowKind::second_half,
                         WindowKind::gaussian, WindowKind::custom}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown window '" + name + "'");
}

std::vector<double> WindowFunction::weights(std::size_t layers) const {
    if (layers == 0) {
        throw std::invalid_argument("window: need at least one layer");
    }
    std::vector<double> alpha(layers, 0.0);
    const std::size_t half = (layers + 1) / 2;  // ceil(L/2), 1-based
    switch (kind) {
    case WindowKind::last_layer:
        alpha.back() = 1.0;
        break;
    case WindowKind::first_half:
        for (std::size_t l = 1; l <= layers; ++l) {
            alpha[l - 1] = l <= half ? 1.0 : 0.0;
        }
        break;
    case WindowKind::second_half:
        for (std::size_t l = 1; l <= layers; ++l) {
            alpha[l - 1] = l >= half ? 1.0 : 0.0;
        }
        break;
    case WindowKind::gaussian: {
        const double mu = (static_cast<double>(layers) + 1.0) / 2.0;
        const double sigma = static_cast<double>(layers) / 4.0;
        double total = 0.0;
        for (std::size_t l = 1; l <= layers; ++l) {
            const double z = static_cast<double>(l) - mu;
            alpha[l - 1] = std::exp(-(z * z) / (2.0 * sigma * sigma));
            total += alpha[l - 1];
        }
        for (double& a : alpha) {
            a /= total;
        }
        break;
    }
    case WindowKind::custom:
        if (custom.size() != layers) {
            throw std::invalid_argument("window: custom weights have length " + std::to_string(custom.size()) +
                                        ", model has " + std::to_string(layers) + " scored layers");
        }
        for (double a : custom) {
            if (!(a >= 0.0)) {
                throw std::invalid_argument("window: weights must be non-negative");
            }
        }
        alpha = custom;
        break;
    }
    return alpha;
}

std::vector<double> aggregate(const Matrix& per_layer, std::span<const double> alpha) {
    if (alpha.size() != per_layer.cols) {
        throw std::invalid_argument("aggregate: " + std::to_string(alpha.size()) + " window weights for " +
                                    std::to_string(per_layer.cols) + " layers");
    }
    std::vector<double> xi(per_layer.rows, 0.0);
    for (std::size_t i = 0; i < per_layer.rows; ++i) {
        double sum = 0.0;
        for (std::size_t l = 0; l < per_layer.cols; ++l) {
            sum += per_layer.at(i, l) * alpha[l];
        }
        xi[i] = sum;
    }
    return xi;
}

Mask compute_mask(std::span<const double> xi, std::size_t gamma, std::string source, std::uint64_t seed) {
    if (gamma > xi.size()) {
        throw std::invalid_argument("compute_mask: gamma=" + std::to_string(gamma) + " exceeds N=" +
                                    std::to_string(xi.size()));
    }
    for (double v : xi) {
        if (std::isnan(v)) {
            throw std::invalid_argument("compute_mask: NaN instability score");
        }
    }
    std::vector<std::size_t> order(xi.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) { return xi[a] > xi[b] || (xi[a] == xi[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(gamma), order.end(), before);
    order.resize(gamma);
    return Mask::from_removed(xi.size(), order, std::move(source), seed);
}

// ---------------------------------------------------------------------------

std::string ScoringConfig::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "noise.sigma=" << noise.sigma << ";noise.seed=" << noise.seed << ";projection.dims=" << projection.dims
       << ";projection.method=" << to_string(projection.method) << ";projection.seed=" << projection.seed
       << ";sensitivity.metric=" << to_string(metric) << ";sensitivity.k=";
    for (std::size_t k : filters_per_layer) {
        os << k << ',';
    }
    os << ";window=" << to_string(window.kind) << ':';
    for (double a : window.custom) {
        os << a << ',';
    }
    return os.str();
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

Tensor normalize_batch(const Model& model, Tensor batch) {
    const NormalizationStats& norm = model.normalization();
    if (norm.empty()) {
        return batch;
    }
    std::vector<float> mean(norm.mean.begin(), norm.mean.end()), stddev(norm.stddev.begin(), norm.stddev.end());
    Tensor out(batch.shape);
    kernels::normalize_channels<float>(batch.values(), out.values(), batch.dim(1), batch.stride0() / batch.dim(1),
                                       mean, stddev);
    return out;
}

/// Runs the clean/noisy forward passes shard by shard and hands each shard's
/// per-layer distance matrices to `sink`. Shards are independent; `sink`
/// must only touch rows belonging to its shard.
template <typename Sink>
void for_each_shard(const Model& model, const Dataset& d, const ScoringConfig& cfg,
                    const SensitivitySelection& sel, const NoiseSource& noise, Sink&& sink) {
    if (cfg.batch_size == 0) {
        throw std::invalid_argument("scoring: batch size must be positive");
    }
    const auto shapes = model.layer_shapes(1);
    std::vector<Projector> projectors;
    for (std::size_t t = 0; t < sel.taps.size(); ++t) {
        const Shape& s = shapes[sel.taps[t]];
        projectors.emplace_back(cfg.projection, s[2] * s[3], t);
    }
    const auto shards = batches(d.size(), cfg.batch_size, 0, 0, false);
    const auto shard_count = static_cast<std::ptrdiff_t>(shards.size());
    // Forward passes are read-only on the model; each shard owns its rows.
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < shard_count; ++s) {
        const auto& rows = shards[static_cast<std::size_t>(s)];
        std::vector<std::size_t> origin;
        for (std::size_t r : rows) {
            origin.push_back(d.origin[r]);
        }
        const Tensor clean_in = normalize_batch(model, batch_images(d, rows));
        const Perturbed noisy_in = perturb(clean_in, origin, noise);
        const auto clean = model.forward(clean_in, sel.taps, true);
        const auto noisy = model.forward(noisy_in.noisy, sel.taps, true);
        std::vector<Matrix> dist;
        for (std::size_t t = 0; t < sel.taps.size(); ++t) {
            const Tensor& fc = clean.features.at(sel.taps[t]);
            const Tensor& fn = noisy.features.at(sel.taps[t]);
            std::vector<std::size_t> channel_rows;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t m : sel.filters[t]) {
                    channel_rows.push_back(i * fc.dim(1) + m);
                }
            }
            // (batch*O, h, w) view -> keep the selected channels.
            const Shape plane_shape{rows.size() * fc.dim(1), fc.dim(2), fc.dim(3)};
            Tensor sel_c = gather_rows(Tensor(plane_shape, fc.data), channel_rows);
            Tensor sel_n = gather_rows(Tensor(plane_shape, fn.data), channel_rows);
            const std::size_t k = sel.filters[t].size();
            sel_c.shape = {rows.size(), k, fc.dim(2), fc.dim(3)};
            sel_n.shape = sel_c.shape;
            dist.push_back(feature_distance(projectors[t].apply(sel_c), projectors[t].apply(sel_n)));
        }
        sink(rows, dist);
    }
}

}  // namespace

std::vector<Matrix> raw_distances(const Model& model, const Dataset& d, const ScoringConfig& cfg,
                                  const SensitivitySelection& selection, const NoiseSource& noise) {
    std::vector<Matrix> out;
    for (const auto& f : selection.filters) {
        out.emplace_back(d.size(), f.size());
    }
    for_each_shard(model, d, cfg, selection, noise,
                   [&](const std::vector<std::size_t>& rows, const std::vector<Matrix>& dist) {
                       for (std::size_t t = 0; t < dist.size(); ++t) {
                           for (std::size_t i = 0; i < rows.size(); ++i) {
                               for (std::size_t m = 0; m < dist[t].cols; ++m) {
                                   out[t].at(rows[i], m) = dist[t].at(i, m);
                               }
                           }
                       }
                   });
    return out;
}

InstabilityMatrix instability_from_distances(const std::vector<Matrix>& distances, const WindowFunction& window) {
    if (distances.empty()) {
        throw std::invalid_argument("instability: no scored layers");
    }
    InstabilityMatrix out;
    const std::size_t n = distances.front().rows;
    out.per_layer = Matrix(n, distances.size());
    for (std::size_t l = 0; l < distances.size(); ++l) {
        const auto xi = layer_instability(normalize_distances(distances[l]));
        for (std::size_t i = 0; i < n; ++i) {
            out.per_layer.at(i, l) = xi[i];
        }
    }
    out.aggregated = aggregate(out.per_layer, window.weights(distances.size()));
    return out;
}

InstabilityMatrix score_dataset(const Model& model, const Dataset& d, const ScoringConfig& cfg,
                                const NoiseSource* noise) {
    d.validate();
    if (d.size() < 2) {
        throw std::invalid_argument("score_dataset: need at least 2 samples");
    }
    const auto sel = select_sensitive_filters(model, cfg.filters_per_layer, cfg.metric);
    const NoiseSource source = noise ? *noise : gaussian_noise(cfg.noise);
    InstabilityMatrix out = instability_from_distances(raw_distances(model, d, cfg, sel, source), cfg.window);
    out.origin = d.origin;
    out.fingerprint = hex(fnv1a(cfg.describe()));
    return out;
}

Mask two_phase_score(const Model& model, const Dataset& d, std::size_t label_budget, std::size_t gamma,
                     const ScoringConfig& cfg, const NoiseSource* noise) {
    d.validate();
    if (label_budget == 0 || label_budget > d.classes) {
        throw std::invalid_argument("two_phase_score: label budget " + std::to_string(label_budget) +
                                    " must lie in [1, C=" + std::to_string(d.classes) + "]");
    }
    const auto sel = select_sensitive_filters(model, cfg.filters_per_layer, cfg.metric);
    const NoiseSource source = noise ? *noise : gaussian_noise(cfg.noise);
    const auto alpha = cfg.window.weights(sel.taps.size());

    // Phase 1: one scalar per sample (window-weighted mean raw distance),
    // reduced to a mean per label.
    std::vector<double> per_sample(d.size(), 0.0);
    for_each_shard(model, d, cfg, sel, source, [&](const std::vector<std::size_t>& rows, const std::vector<Matrix>& dist) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double v = 0.0;
            for (std::size_t t = 0; t < dist.size(); ++t) {
                double mean = 0.0;
                for (std::size_t m = 0; m < dist[t].cols; ++m) {
                    mean += dist[t].at(i, m);
                }
                v += alpha[t] * mean / static_cast<double>(dist[t].cols);
            }
            per_sample[rows[i]] = v;
        }
    });
    std::vector<double> label_sum(d.classes, 0.0);
    std::vector<std::size_t> label_count(d.classes, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        label_sum[static_cast<std::size_t>(d.labels[i])] += per_sample[i];
        ++label_count[static_cast<std::size_t>(d.labels[i])];
    }
    std::vector<double> label_mean(d.classes, -1.0);
    for (std::size_t c = 0; c < d.classes; ++c) {
        if (label_count[c] > 0) {
            label_mean[c] = label_sum[c] / static_cast<double>(label_count[c]);
        }
    }
    const auto chosen = top_k_filters(label_mean, label_budget);

    // Phase 2: full statistics over the restricted pool only.
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (std::binary_search(chosen.begin(), chosen.end(), static_cast<std::size_t>(d.labels[i]))) {
            pool.push_back(i);
        }
    }
    if (gamma > pool.size()) {
        throw std::invalid_argument("two_phase_score: gamma=" + std::to_string(gamma) +
                                    " exceeds restricted pool of " + std::to_string(pool.size()) + " samples");
    }
    if (pool.size() < 2) {
        throw std::invalid_argument("two_phase_score: restricted pool needs at least 2 samples");
    }
    const Dataset restricted = subset(d, pool);
    const auto scores = instability_from_distances(raw_distances(model, restricted, cfg, sel, source), cfg.window);
    const Mask pool_mask = compute_mask(scores.aggregated, gamma);
    std::vector<std::size_t> removed;
    for (std::size_t k : pool_mask.removed()) {
        removed.push_back(pool[k]);
    }
    return Mask::from_removed(d.size(), removed, "two-phase:" + hex(fnv1a(cfg.describe())), cfg.noise.seed);
}

void write_instability_dump(const std::filesystem::path& path, const InstabilityMatrix& m) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write instability dump '" + path.string() + "'");
    }
    out.precision(9);
    for (std::size_t i = 0; i < m.per_layer.rows; ++i) {
        out << (m.origin.empty() ? i : m.origin[i]) << ' ' << m.aggregated[i];
        for (std::size_t l = 0; l < m.per_layer.cols; ++l) {
            out << ' ' << m.per_layer.at(i, l);
        }
        out << '\n';
    }
}

}  // namespace qtart
