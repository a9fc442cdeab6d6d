#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "qtart/dataset.hpp"
#include "qtart/rng.hpp"

using namespace qtart;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qtart-test-datasets-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

SyntheticSpec small_spec(std::size_t outliers = 10) {
    SyntheticSpec s;
    s.samples = 200;
    s.classes = 4;
    s.channels = 2;
    s.height = 8;
    s.width = 8;
    s.outliers = outliers;
    s.seed = 3;
    return s;
}

}  // namespace

TEST_CASE("CIFAR binary records") {
    const fs::path dir = scratch_dir("cifar");
    std::vector<std::uint8_t> bytes;
    for (std::uint8_t label : {7, 2}) {
        bytes.push_back(label);
        for (std::size_t p = 0; p < 3072; ++p) bytes.push_back(static_cast<std::uint8_t>((p + label) % 256));
    }
    write_bytes(dir / "batch.bin", bytes);
    const Dataset d = load_cifar_binary(dir / "batch.bin");
    CHECK(d.size() == 2);
    CHECK(d.images.shape == Shape{2, 3, 32, 32});
    CHECK(d.labels == std::vector<int>{7, 2});
    CHECK(d.images[3072 + 5] == doctest::Approx(7.0 / 255.0));

    bytes.pop_back();
    write_bytes(dir / "short.bin", bytes);
    CHECK_THROWS(load_cifar_binary(dir / "short.bin"));
}

TEST_CASE("IDX image and label pair") {
    const fs::path dir = scratch_dir("idx");
    std::vector<std::uint8_t> img, lbl;
    push_be32(img, 0x803);
    push_be32(img, 4);
    push_be32(img, 28);
    push_be32(img, 28);
    for (std::size_t i = 0; i < 4 * 28 * 28; ++i) img.push_back(static_cast<std::uint8_t>(i % 251));
    push_be32(lbl, 0x801);
    push_be32(lbl, 4);
    for (std::uint8_t y : {0, 5, 2, 1}) lbl.push_back(y);
    write_bytes(dir / "img.idx", img);
    write_bytes(dir / "lbl.idx", lbl);
    const Dataset d = load_idx_pair(dir / "img.idx", dir / "lbl.idx");
    CHECK(d.size() == 4);
    CHECK(d.images.shape == Shape{4, 1, 28, 28});
    CHECK(d.classes == 6);

    img[3] = 0x01;
    write_bytes(dir / "bad.idx", img);
    CHECK_THROWS(load_idx_pair(dir / "bad.idx", dir / "lbl.idx"));
}

TEST_CASE("synthetic dataset round-trips bit-exactly") {
    const fs::path dir = scratch_dir("roundtrip");
    const Dataset d = generate_synthetic(small_spec());
    save_dataset(dir / "d.qtds", d);
    const Dataset back = load_dataset(dir / "d.qtds");
    CHECK(back.images.data == d.images.data);
    CHECK(back.labels == d.labels);
    CHECK(back.planted_outliers == d.planted_outliers);
    CHECK(back.origin == d.origin);
    CHECK(encode_dataset(back) == encode_dataset(d));

    auto bytes = encode_dataset(d);
    bytes[0] ^= 0xFF;
    CHECK_THROWS(decode_dataset(bytes));
}

TEST_CASE("synthetic generator contracts") {
    CHECK(generate_synthetic(small_spec(0)).planted_outliers.empty());

    const Dataset a = generate_synthetic(small_spec());
    const Dataset b = generate_synthetic(small_spec());
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);
    CHECK(a.planted_outliers.size() == 10);

    // Residual variance around the class mean: outliers far above clean samples.
    SyntheticSpec big = small_spec(40);
    big.samples = 400;
    const Dataset d = generate_synthetic(big);
    const std::size_t stride = d.images.stride0();
    std::vector<std::vector<double>> mean(d.classes, std::vector<double>(stride, 0.0));
    std::vector<std::size_t> count(d.classes, 0);
    std::vector<bool> outlier(d.size(), false);
    for (std::size_t i : d.planted_outliers) outlier[i] = true;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (outlier[i]) continue;
        const auto c = static_cast<std::size_t>(d.labels[i]);
        ++count[c];
        for (std::size_t j = 0; j < stride; ++j) mean[c][j] += d.images[i * stride + j];
    }
    for (std::size_t c = 0; c < d.classes; ++c)
        for (double& v : mean[c]) v /= static_cast<double>(count[c]);
    double var_out = 0.0, var_clean = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < stride; ++j) {
            const double r = d.images[i * stride + j] - mean[static_cast<std::size_t>(d.labels[i])][j];
            s += r * r;
        }
        (outlier[i] ? var_out : var_clean) += s;
    }
    var_out /= 40.0 * static_cast<double>(stride);
    var_clean /= 360.0 * static_cast<double>(stride);
    CHECK(var_out > 10.0 * var_clean);
}

TEST_CASE("normalization") {
    Dataset d = generate_synthetic(small_spec());
    const Dataset same = normalize(d, NormalizationStats::identity(2));
    CHECK(same.images.data == d.images.data);

    Dataset flat = d;
    std::fill(flat.images.data.begin(), flat.images.data.end(), 5.0F);
    const Dataset zero = normalize(flat, NormalizationStats{{5.0, 5.0}, {2.0, 2.0}});
    CHECK(std::all_of(zero.images.data.begin(), zero.images.data.end(), [](float v) { return v == 0.0F; }));

    const NormalizationStats stats = compute_stats(d);
    const Dataset back = denormalize(normalize(d, stats), stats);
    for (std::size_t i = 0; i < d.images.size(); ++i) CHECK(std::abs(back.images[i] - d.images[i]) < 1e-6);

    const Dataset z = normalize(d, stats);
    const NormalizationStats zs = compute_stats(z);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(std::abs(zs.mean[c]) < 1e-5);
        CHECK(zs.stddev[c] == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("masks and subsets") {
    const Dataset d = generate_synthetic(small_spec());
    const Dataset all = apply_mask(d, Mask::all_ones(d.size()));
    CHECK(all.images.data == d.images.data);
    CHECK(all.labels == d.labels);

    SyntheticSpec three = small_spec(0);
    three.samples = 3;
    const Dataset t = generate_synthetic(three);
    const std::vector<std::size_t> drop{1};
    const Dataset kept = apply_mask(t, Mask::from_removed(3, drop));
    CHECK(kept.origin == std::vector<std::size_t>{0, 2});
    CHECK(kept.labels == std::vector<int>{t.labels[0], t.labels[2]});

    Rng rng(9);
    std::vector<std::size_t> removed;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (rng.uniform() < 0.3) removed.push_back(i);
    const Mask m = Mask::from_removed(d.size(), removed);
    m.validate();
    const Dataset r = apply_mask(d, m);
    CHECK(r.size() == d.size() - removed.size());
    const std::size_t stride = d.images.stride0();
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r.labels[i] == d.labels[r.origin[i]]);
        CHECK(std::equal(r.images.data.begin() + static_cast<long>(i * stride),
                         r.images.data.begin() + static_cast<long>((i + 1) * stride),
                         d.images.data.begin() + static_cast<long>(r.origin[i] * stride)));
    }
    for (std::size_t p : r.planted_outliers) CHECK(std::binary_search(d.planted_outliers.begin(), d.planted_outliers.end(), r.origin[p]));

    Mask bad = m;
    bad.gamma += 1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("mask files round-trip") {
    const fs::path dir = scratch_dir("mask");
    const std::vector<std::size_t> removed{3, 7, 8};
    const Mask m = Mask::from_removed(12, removed, "qtart", 42);
    write_mask_file(dir / "m.txt", m);
    const Mask back = read_mask_file(dir / "m.txt");
    CHECK(back.bits == m.bits);
    CHECK(back.gamma == 3);
    CHECK(back.seed == 42);
}

TEST_CASE("epoch batches") {
    const auto b = batches(5, 2, 1, 0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 2);
    CHECK(b[1].size() == 2);
    CHECK(b[2].size() == 1);

    CHECK(batches(97, 8, 4, 3) == batches(97, 8, 4, 3));
    CHECK(batches(97, 8, 4, 3) != batches(97, 8, 4, 4));

    std::vector<std::size_t> seen;
    for (const auto& batch : batches(97, 8, 4, 3)) seen.insert(seen.end(), batch.begin(), batch.end());
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> expect(97);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    CHECK(seen == expect);
}
