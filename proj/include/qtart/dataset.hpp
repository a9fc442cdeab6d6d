#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtart/model.hpp"
#include "qtart/normalization.hpp"
#include "qtart/tensor.hpp"

namespace qtart {

enum class Provenance : std::uint8_t { file = 0, synthetic = 1 };

/// Labelled image set. Pixels are stored in [0, 1]; labels are 0-based.
struct Dataset {
    Tensor images;  // (N, C, H, W)
    std::vector<int> labels;
    std::size_t classes = 0;
    Provenance provenance = Provenance::file;
    std::vector<std::size_t> planted_outliers;  // positions in this dataset, ascending
    std::vector<std::size_t> origin;            // original index of each position

    std::size_t size() const { return labels.size(); }
    InputSpec input_spec() const { return {images.dim(1), images.dim(2), images.dim(3)}; }

    void validate() const;
};

/// Binary retain/remove vector; bits[i] == 0 removes sample i.
struct Mask {
    std::vector<std::uint8_t> bits;
    std::size_t gamma = 0;
    std::string source;
    std::uint64_t seed = 0;

    static Mask all_ones(std::size_t n, std::string source = {});
    /// Builds a mask from the list of removed positions.
    static Mask from_removed(std::size_t n, std::span<const std::size_t> removed, std::string source = {},
                             std::uint64_t seed = 0);

    std::size_t size() const { return bits.size(); }
    std::size_t retained_count() const { return bits.size() - gamma; }
    std::vector<std::size_t> removed() const;
    std::vector<std::size_t> retained() const;

    /// Throws unless the number of zeros equals gamma.
    void validate() const;
};

enum class ImageFormat { cifar_binary, idx_pair, qtds };

ImageFormat parse_image_format(const std::string& name);

/// CIFAR-10 binary batches: records of 1 label byte + 3x1024 channel-planar
/// row-major pixels.
Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t classes = 10);

/// IDX images (magic 0x00000803) with matching IDX labels (0x00000801).
/// The class count is inferred from the largest label.
Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Dispatches on `format`; `labels_path` is used only by idx-pair.
Dataset load_image_dataset(const std::filesystem::path& path, ImageFormat format,
                           const std::filesystem::path& labels_path = {});

struct SyntheticSpec {
    std::size_t samples = 1000;
    std::size_t classes = 4;
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t outliers = 0;      // planted noisy samples
    double outlier_sigma = 0.5;
    double jitter = 0.05;          // per-pixel noise on clean samples
    double class_separation = 1.0; // scales the class-specific part of each template
    std::uint64_t seed = 0;        // fixes the class templates
    std::uint64_t split = 0;       // selects an independent sample stream over the same templates
    std::optional<int> outlier_class;  // restrict planted outliers to one class
};

/// Class templates are smooth sums of low-frequency cosines; clean samples
/// add N(0, jitter^2) per pixel, planted outliers add N(0, outlier_sigma^2).
/// Pixels are clamped to [0, 1]. Fully determined by the generator parameters.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Per-channel mean and (population) standard deviation over all samples.
NormalizationStats compute_stats(const Dataset& d);

Dataset normalize(const Dataset& d, const NormalizationStats& stats);
Dataset denormalize(const Dataset& d, const NormalizationStats& stats);

/// Retained samples in original relative order; origin indices and planted
/// outliers are carried over.
Dataset apply_mask(const Dataset& d, const Mask& m);

/// Subset by explicit positions (ascending).
Dataset subset(const Dataset& d, std::span<const std::size_t> positions);

/// Index batches of one epoch. The permutation is a pure function of
/// (seed, epoch); the last batch may be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch, bool shuffle = true);

Tensor batch_images(const Dataset& d, std::span<const std::size_t> positions);
std::vector<int> batch_labels(const Dataset& d, std::span<const std::size_t> positions);

/// "QTDS" container: u32 version, u32 N C H W classes, u8 provenance,
/// f32 pixels, u32 labels, u64 outlier count + indices, u64 origin indices.
std::vector<std::uint8_t> encode_dataset(const Dataset& d);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

/// Text mask file: "gamma=<g> n=<n> seed=<s>" then one removed index per line.
void write_mask_file(const std::filesystem::path& path, const Mask& m);
Mask read_mask_file(const std::filesystem::path& path);

}  // namespace qtart
