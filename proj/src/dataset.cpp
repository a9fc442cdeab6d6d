#include "qtart/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "qtart/binary_io.hpp"
#include "qtart/rng.hpp"

namespace qtart {

void Dataset::validate() const {
    if (labels.empty()) {
        throw std::invalid_argument("dataset: no samples");
    }
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw std::invalid_argument("dataset: images " + to_string(images.shape) + " do not match " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " of sample " +
                                        std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
        }
    }
    if (origin.size() != labels.size()) {
        throw std::invalid_argument("dataset: origin index map has wrong length");
    }
    for (std::size_t p : planted_outliers) {
        if (p >= labels.size()) {
            throw std::invalid_argument("dataset: planted outlier index out of range");
        }
    }
}

Mask Mask::all_ones(std::size_t n, std::string source) {
    Mask m;
    m.bits.assign(n, 1);
    m.source = std::move(source);
    return m;
}

Mask Mask::from_removed(std::size_t n, std::span<const std::size_t> removed, std::string source, std::uint64_t seed) {
    Mask m = all_ones(n, std::move(source));
    m.seed = seed;
    for (std::size_t i : removed) {
        if (i >= n) {
            throw std::out_of_range("mask: removed index " + std::to_string(i) + " >= n=" + std::to_string(n));
        }
        if (m.bits[i] == 0) {
            throw std::invalid_argument("mask: index " + std::to_string(i) + " removed twice");
        }
        m.bits[i] = 0;
    }
    m.gamma = removed.size();
    return m;
}

std::vector<std::size_t> Mask::removed() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] == 0) {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<std::size_t> Mask::retained() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != 0) {
            out.push_back(i);
        }
    }
    return out;
}

void Mask::validate() const {
    const auto zeros = static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{0}));
    if (zeros != gamma) {
        throw std::logic_error("mask: " + std::to_string(zeros) + " zeros but gamma=" + std::to_string(gamma));
    }
}

ImageFormat parse_image_format(const std::string& name) {
    if (name == "cifar-binary") {
        return ImageFormat::cifar_binary;
    }
    if (name == "idx-pair") {
        return ImageFormat::idx_pair;
    }
    if (name == "qtds") {
        return ImageFormat::qtds;
    }
    throw std::invalid_argument("unknown dataset format '" + name + "'");
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

}  // namespace

Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t classes) {
    constexpr std::size_t plane = 32 * 32, record = 1 + 3 * plane;
    const auto bytes = read_file(path);
    if (bytes.empty()) {
        throw FormatError("empty CIFAR file '" + path.string() + "'", 0);
    }
    if (bytes.size() % record != 0) {
        throw FormatError("truncated CIFAR record in '" + path.string() + "'", bytes.size() - bytes.size() % record);
    }
    const std::size_t n = bytes.size() / record;
    Dataset d;
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(n);
    d.classes = classes;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = i * record;
        if (bytes[at] >= classes) {
            throw FormatError("label " + std::to_string(bytes[at]) + " out of range", at);
        }
        d.labels[i] = bytes[at];
        for (std::size_t p = 0; p < 3 * plane; ++p) {
            d.images[i * 3 * plane + p] = static_cast<float>(bytes[at + 1 + p]) / 255.0f;
        }
    }
    d.origin = iota_indices(n);
    d.validate();
    return d;
}

Dataset load_idx_pair(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img_bytes = read_file(images);
    const auto lbl_bytes = read_file(labels);
    ByteReader ir(img_bytes);
    if (ir.u32_be("IDX image magic") != 0x00000803u) {
        throw FormatError("bad IDX image magic in '" + images.string() + "'", 0);
    }
    const std::size_t n = ir.u32_be("IDX image count");
    const std::size_t h = ir.u32_be("IDX rows");
    const std::size_t w = ir.u32_be("IDX cols");
    const auto pixels = ir.take(n * h * w, "IDX pixels");

    ByteReader lr(lbl_bytes);
    if (lr.u32_be("IDX label magic") != 0x00000801u) {
        throw FormatError("bad IDX label magic in '" + labels.string() + "'", 0);
    }
    const std::size_t nl = lr.u32_be("IDX label count");
    if (nl != n) {
        throw FormatError("IDX label count " + std::to_string(nl) + " != image count " + std::to_string(n), 4);
    }
    const auto raw_labels = lr.take(n, "IDX labels");
    if (n == 0) {
        throw FormatError("IDX file holds no samples", 4);
    }

    Dataset d;
    d.images = Tensor({n, 1, h, w});
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        d.images[i] = static_cast<float>(pixels[i]) / 255.0f;
    }
    d.labels.assign(raw_labels.begin(), raw_labels.end());
    d.classes = static_cast<std::size_t>(*std::max_element(raw_labels.begin(), raw_labels.end())) + 1;
    d.origin = iota_indices(n);
    d.validate();
    return d;
}

Dataset load_image_dataset(const std::filesystem::path& path, ImageFormat format,
                           const std::filesystem::path& labels_path) {
    switch (format) {
    case ImageFormat::cifar_binary:
        return load_cifar_binary(path);
    case ImageFormat::idx_pair:
        if (labels_path.empty()) {
            throw std::invalid_argument("idx-pair format needs a labels file");
        }
        return load_idx_pair(path, labels_path);
    case ImageFormat::qtds:
        return load_dataset(path);
    }
    throw std::invalid_argument("unknown dataset format");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.samples == 0 || spec.classes == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0) {
        throw std::invalid_argument("synthetic: all extents must be positive");
    }
    if (spec.outliers >= spec.samples) {
        throw std::invalid_argument("synthetic: outlier count must be below the sample count");
    }
    if (spec.outlier_class && (*spec.outlier_class < 0 || static_cast<std::size_t>(*spec.outlier_class) >= spec.classes)) {
        throw std::invalid_argument("synthetic: outlier class out of range");
    }
    const std::size_t plane = spec.height * spec.width;
    const std::size_t sample_size = spec.channels * plane;

    // Templates: a shared base pattern plus a class-specific pattern.
    Rng trng(derive_seed(spec.seed, stream::synthetic, 0));
    auto pattern = [&](std::vector<double>& out) {
        out.assign(sample_size, 0.0);
        for (std::size_t c = 0; c < spec.channels; ++c) {
            for (int k = 0; k < 3; ++k) {
                const double fy = trng.uniform(0.2, 1.5), fx = trng.uniform(0.2, 1.5);
                const double phase = trng.uniform(0.0, 2.0 * std::numbers::pi);
                const double amp = trng.uniform(0.5, 1.0) / 3.0;
                for (std::size_t y = 0; y < spec.height; ++y) {
                    for (std::size_t x = 0; x < spec.width; ++x) {
                        out[c * plane + y * spec.width + x] +=
                            amp * std::cos(2.0 * std::numbers::pi *
                                               (fy * static_cast<double>(y) / static_cast<double>(spec.height) +
                                                fx * static_cast<double>(x) / static_cast<double>(spec.width)) +
                                           phase);
                    }
                }
            }
        }
    };
    std::vector<double> base;
    pattern(base);
    std::vector<std::vector<double>> templates(spec.classes);
    for (auto& t : templates) {
        pattern(t);
        for (std::size_t i = 0; i < sample_size; ++i) {
            t[i] = std::clamp(0.5 + 0.15 * base[i] + 0.25 * spec.class_separation * t[i], 0.05, 0.95);
        }
    }

    Rng rng(derive_seed(spec.seed, stream::synthetic, spec.split + 1));
    Dataset d;
    d.classes = spec.classes;
    d.provenance = Provenance::synthetic;
    d.labels.resize(spec.samples);
    for (std::size_t i = 0; i < spec.samples; ++i) {
        d.labels[i] = static_cast<int>(i % spec.classes);
    }
    // Shuffle labels so classes interleave irregularly.
    for (std::size_t i = spec.samples; i > 1; --i) {
        std::swap(d.labels[i - 1], d.labels[rng.below(i)]);
    }

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < spec.samples; ++i) {
        if (!spec.outlier_class || d.labels[i] == *spec.outlier_class) {
            candidates.push_back(i);
        }
    }
    if (spec.outliers > candidates.size()) {
        throw std::invalid_argument("synthetic: not enough samples in the outlier class");
    }
    for (std::size_t k = 0; k < spec.outliers; ++k) {
        std::swap(candidates[k], candidates[k + rng.below(candidates.size() - k)]);
    }
    d.planted_outliers.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(spec.outliers));
    std::sort(d.planted_outliers.begin(), d.planted_outliers.end());
    std::vector<std::uint8_t> is_outlier(spec.samples, 0);
    for (std::size_t p : d.planted_outliers) {
        is_outlier[p] = 1;
    }

    d.images = Tensor({spec.samples, spec.channels, spec.height, spec.width});
    for (std::size_t i = 0; i < spec.samples; ++i) {
        const auto& t = templates[static_cast<std::size_t>(d.labels[i])];
        const double sigma = is_outlier[i] ? spec.outlier_sigma : spec.jitter;
        for (std::size_t j = 0; j < sample_size; ++j) {
            d.images[i * sample_size + j] = static_cast<float>(std::clamp(t[j] + rng.normal(0.0, sigma), 0.0, 1.0));
        }
    }
    d.origin = iota_indices(spec.samples);
    return d;
}

NormalizationStats compute_stats(const Dataset& d) {
    const std::size_t n = d.images.dim(0), channels = d.images.dim(1);
    const std::size_t plane = d.images.dim(2) * d.images.dim(3);
    NormalizationStats s;
    s.mean.assign(channels, 0.0);
    s.stddev.assign(channels, 0.0);
    const double count = static_cast<double>(n * plane);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* p = d.images.data.data() + (i * channels + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum += p[j];
            }
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* p = d.images.data.data() + (i * channels + c) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sq += (p[j] - mean) * (p[j] - mean);
            }
        }
        const double sd = std::sqrt(sq / count);
        s.mean[c] = mean;
        s.stddev[c] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

namespace {

Dataset affine(const Dataset& d, const NormalizationStats& s, bool forward) {
    s.validate();
    if (s.channels() != d.images.dim(1)) {
        throw std::invalid_argument("normalize: stats have " + std::to_string(s.channels()) +
                                    " channels, dataset has " + std::to_string(d.images.dim(1)));
    }
    Dataset out = d;
    const std::size_t channels = d.images.dim(1), plane = d.images.dim(2) * d.images.dim(3);
    for (std::size_t i = 0; i < out.images.size(); ++i) {
        const std::size_t c = (i / plane) % channels;
        const double v = d.images[i];
        out.images[i] = static_cast<float>(forward ? (v - s.mean[c]) / s.stddev[c] : v * s.stddev[c] + s.mean[c]);
    }
    return out;
}

}  // namespace

Dataset normalize(const Dataset& d, const NormalizationStats& stats) { return affine(d, stats, true); }

Dataset denormalize(const Dataset& d, const NormalizationStats& stats) { return affine(d, stats, false); }

Dataset subset(const Dataset& d, std::span<const std::size_t> positions) {
    Dataset out;
    out.images = gather_rows(d.images, positions);
    out.classes = d.classes;
    out.provenance = d.provenance;
    out.labels.reserve(positions.size());
    out.origin.reserve(positions.size());
    for (std::size_t p : positions) {
        out.labels.push_back(d.labels.at(p));
        out.origin.push_back(d.origin.at(p));
    }
    for (std::size_t k = 0; k < positions.size(); ++k) {
        if (std::binary_search(d.planted_outliers.begin(), d.planted_outliers.end(), positions[k])) {
            out.planted_outliers.push_back(k);
        }
    }
    return out;
}

Dataset apply_mask(const Dataset& d, const Mask& m) {
    if (m.size() != d.size()) {
        throw std::invalid_argument("apply_mask: mask length " + std::to_string(m.size()) + " != dataset size " +
                                    std::to_string(d.size()));
    }
    m.validate();
    const auto keep = m.retained();
    return subset(d, keep);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::size_t epoch, bool shuffle) {
    if (batch_size == 0) {
        throw std::invalid_argument("batches: batch size must be at least 1");
    }
    std::vector<std::size_t> order = iota_indices(n);
    if (shuffle) {
        Rng rng(derive_seed(seed, stream::shuffle, epoch));
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

Tensor batch_images(const Dataset& d, std::span<const std::size_t> positions) {
    return gather_rows(d.images, positions);
}

std::vector<int> batch_labels(const Dataset& d, std::span<const std::size_t> positions) {
    std::vector<int> out;
    out.reserve(positions.size());
    for (std::size_t p : positions) {
        out.push_back(d.labels[p]);
    }
    return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
    ByteWriter w;
    w.bytes("QTDS");
    w.u32(1);
    for (std::size_t e : d.images.shape) {
        w.u32(static_cast<std::uint32_t>(e));
    }
    w.u32(static_cast<std::uint32_t>(d.classes));
    w.u8(static_cast<std::uint8_t>(d.provenance));
    for (float v : d.images.data) {
        w.f32(v);
    }
    for (int l : d.labels) {
        w.u32(static_cast<std::uint32_t>(l));
    }
    w.u64(d.planted_outliers.size());
    for (std::size_t p : d.planted_outliers) {
        w.u64(p);
    }
    for (std::size_t o : d.origin) {
        w.u64(o);
    }
    return w.data();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect("QTDS", "dataset");
    const std::uint32_t version = r.u32("version");
    if (version != 1) {
        throw FormatError("unsupported dataset version " + std::to_string(version), 4);
    }
    Shape shape(4);
    for (auto& e : shape) {
        e = r.u32("dataset extent");
    }
    Dataset d;
    d.classes = r.u32("class count");
    const std::size_t prov_at = r.offset();
    const std::uint8_t prov = r.u8("provenance");
    if (prov > 1) {
        throw FormatError("unknown provenance tag", prov_at);
    }
    d.provenance = static_cast<Provenance>(prov);
    const std::size_t n = shape[0];
    r.need(element_count(shape) * 4, "pixels");
    d.images = Tensor(shape);
    for (float& v : d.images.data) {
        v = r.f32("pixels");
    }
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = r.offset();
        const std::uint32_t l = r.u32("label");
        if (l >= d.classes) {
            throw FormatError("label " + std::to_string(l) + " out of range", at);
        }
        d.labels[i] = static_cast<int>(l);
    }
    const std::uint64_t outliers = r.u64("outlier count");
    r.need(outliers * 8, "outlier indices");
    d.planted_outliers.resize(outliers);
    for (auto& p : d.planted_outliers) {
        p = r.u64("outlier index");
    }
    d.origin.resize(n);
    for (auto& o : d.origin) {
        o = r.u64("origin index");
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after dataset", r.offset());
    }
    d.validate();
    return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) { write_file(path, encode_dataset(d)); }

Dataset load_dataset(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("dataset '" + path.string() + "' does not exist");
    }
    return decode_dataset(read_file(path));
}

void write_mask_file(const std::filesystem::path& path, const Mask& m) {
    m.validate();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write mask '" + path.string() + "'");
    }
    out << "gamma=" << m.gamma << " n=" << m.size() << " seed=" << m.seed << '\n';
    for (std::size_t i : m.removed()) {
        out << i << '\n';
    }
}

Mask read_mask_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open mask '" + path.string() + "'");
    }
    std::string header;
    std::getline(in, header);
    std::size_t gamma = 0, n = 0;
    unsigned long long seed = 0;
    if (std::sscanf(header.c_str(), "gamma=%zu n=%zu seed=%llu", &gamma, &n, &seed) != 3) {
        throw std::runtime_error("mask '" + path.string() + "': malformed header '" + header + "'");
    }
    std::vector<std::size_t> removed;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        removed.push_back(std::stoull(line));
    }
    if (removed.size() != gamma) {
        throw std::runtime_error("mask '" + path.string() + "': header says gamma=" + std::to_string(gamma) +
                                 " but lists " + std::to_string(removed.size()) + " indices");
    }
    return Mask::from_removed(n, removed, path.stem().string(), seed);
}

}  // namespace qtart
