// Serial reference kernels against the OpenMP kernels on a CIFAR-sized layer.

#include <benchmark/benchmark.h>

#include <vector>

#include "qtart/kernels/parallel.hpp"
#include "qtart/kernels/reference.hpp"
#include "qtart/rng.hpp"

namespace {

namespace k = qtart::kernels;

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
    qtart::Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal());
    return v;
}

k::ConvGeometry conv_geometry(std::size_t batch) { return {batch, 16, 32, 32, 32, 3, 3, 1}; }

template <bool Parallel>
void conv_forward(benchmark::State& state) {
    const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
    const auto in = random_vector(g.batch * g.in_channels * g.in_plane(), 1);
    const auto w = random_vector(g.out_channels * g.filter_size(), 2);
    const auto b = random_vector(g.out_channels, 3);
    std::vector<float> out(g.batch * g.out_channels * g.out_plane());
    for (auto _ : state) {
        if constexpr (Parallel)
            k::conv2d_forward<float>(g, in, w, b, out);
        else
            k::reference::conv2d_forward<float>(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

template <bool Parallel>
void dense_forward(benchmark::State& state) {
    const k::DenseGeometry g{static_cast<std::size_t>(state.range(0)), 4096, 256};
    const auto in = random_vector(g.batch * g.in_features, 4);
    const auto w = random_vector(g.out_features * g.in_features, 5);
    const auto b = random_vector(g.out_features, 6);
    std::vector<float> out(g.batch * g.out_features);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::dense_forward<float>(g, in, w, b, out);
        else
            k::reference::dense_forward<float>(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

}  // namespace

BENCHMARK(conv_forward<false>)->Name("conv_forward/reference")->Arg(8)->Arg(32);
BENCHMARK(conv_forward<true>)->Name("conv_forward/parallel")->Arg(8)->Arg(32);
BENCHMARK(dense_forward<false>)->Name("dense_forward/reference")->Arg(32)->Arg(128);
BENCHMARK(dense_forward<true>)->Name("dense_forward/parallel")->Arg(32)->Arg(128);

BENCHMARK_MAIN();
