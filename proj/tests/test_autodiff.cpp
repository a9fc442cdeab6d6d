#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "qtart/model.hpp"
#include "qtart/optim.hpp"
#include "qtart/rng.hpp"
#include "qtart/tape.hpp"

using namespace qtart;

namespace {

std::vector<double> random_batch(const InputSpec& in, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n * in.size());
    for (double& v : x) v = rng.uniform();
    return x;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

}  // namespace

TEST_CASE("identity dense layer with relu") {
    Layer dense{LayerKind::dense, Tensor({2, 2}, {1, 0, 0, 1}), Tensor(Shape{2}), 0, 2};
    Model m(InputSpec{2, 1, 1}, 2, {Layer{LayerKind::flatten, {}, {}, 0, 2}, dense, Layer{LayerKind::relu, {}, {}, 0, 2}});
    const auto out = m.forward(Tensor({1, 2, 1, 1}, {1.0F, -1.0F}));
    CHECK(out.logits.data == std::vector<float>{1.0F, 0.0F});
}

TEST_CASE("1x1 conv scales the feature map") {
    Layer conv{LayerKind::conv2d, Tensor({1, 1, 1, 1}, {2.0F}), Tensor(Shape{1}), 0, 2};
    Model m(InputSpec{1, 2, 2}, 4,
            {conv, Layer{LayerKind::relu, {}, {}, 0, 2}, Layer{LayerKind::flatten, {}, {}, 0, 2}});
    const std::vector<std::size_t> capture{1};
    const auto out = m.forward(Tensor({1, 1, 2, 2}, 1.0F), capture);
    CHECK(out.features.at(1).data == std::vector<float>(4, 2.0F));
}

TEST_CASE("forward matches the straight-line reimplementation") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const BasicModel<double> m = oracle::micro_net(seed).cast<double>();
        const std::size_t n = 4;
        const auto x = random_batch(m.input(), n, seed + 100);
        const auto out = m.forward(BasicTensor<double>({n, m.input().channels, m.input().height, m.input().width}, x));
        const auto expect = oracle::logits(m, x, n);
        REQUIRE(out.logits.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(out.logits[i] == doctest::Approx(static_cast<double>(expect[i])).epsilon(1e-12));
        }
    }
}

TEST_CASE("smoothed targets and cross-entropy") {
    const auto t = smoothed_target(3, 10, 0.1);
    for (std::size_t c = 0; c < 10; ++c) CHECK(t[c] == doctest::Approx(c == 3 ? 0.91 : 0.01).epsilon(1e-12));

    BasicTape<double> tape;
    const Var z = tape.leaf(BasicTensor<double>({1, 4}, 0.7), false);
    const std::vector<int> y{2};
    const Var l = tape.cross_entropy(z, y, 0.0);
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(5);
    std::vector<double> logits{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    const std::vector<int> labels{1, 0};
    BasicTape<double> t2;
    const Var z2 = t2.leaf(BasicTensor<double>({2, 2}, logits), false);
    const double got = t2.value(t2.cross_entropy(z2, labels, 0.5))[0];
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        const double a = logits[2 * i], b = logits[2 * i + 1];
        const double lse = std::log(std::exp(a) + std::exp(b));
        const double ta = labels[i] == 0 ? 0.75 : 0.25;
        expect -= ta * (a - lse) + (1.0 - ta) * (b - lse);
    }
    CHECK(got == doctest::Approx(expect / 2.0).epsilon(1e-12));
}

TEST_CASE("gradient of w squared") {
    BasicTape<double> tape;
    const Var w = tape.leaf(BasicTensor<double>(Shape{1}, 3.0), true);
    const Var f = tape.sum(tape.mul(w, w));
    tape.backward(f);
    CHECK(tape.grad(w)[0] == 6.0);
}

TEST_CASE("dense relu micro-net matches central differences") {
    Model m = make_mlp(6, {5}, 3, 11);
    for (auto& l : m.layers())
        if (l.has_parameters())
            for (float& b : l.bias.data) b = 0.05F;
    const auto md = m.cast<double>();
    const auto x = random_batch(md.input(), 4, 3);
    const auto y = random_labels(4, 3, 4);
    const auto check = oracle::finite_difference_check(md, x, 4, y, 0.0, 1e-4);
    CHECK(check.checked == md.parameter_count() + x.size());
    CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("conv micro-nets match central differences for parameters and input") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto md = oracle::micro_net(seed).cast<double>();
        const auto x = random_batch(md.input(), 3, seed);
        const auto y = random_labels(3, md.classes(), seed);
        const auto check = oracle::finite_difference_check(md, x, 3, y, 0.1);
        INFO("seed " << seed << " analytic " << check.worst_analytic << " numeric " << check.worst_numeric);
        CHECK(check.max_rel_error < 1e-4);
    }
}

TEST_CASE("a dead relu path has exactly zero gradient") {
    Layer first{LayerKind::dense, Tensor({2, 2}, 0.0F), Tensor(Shape{2}, -1.0F), 0, 2};
    Layer second{LayerKind::dense, Tensor({2, 2}, {1, 2, 3, 4}), Tensor(Shape{2}), 0, 2};
    Model m(InputSpec{2, 1, 1}, 2,
            {Layer{LayerKind::flatten, {}, {}, 0, 2}, first, Layer{LayerKind::relu, {}, {}, 0, 2}, second});
    const std::vector<int> y{0};
    const auto g = loss_gradients(m, Tensor({1, 2, 1, 1}, {0.5F, -0.3F}), y, 0.0, {}, true);
    for (float v : g.params[0]) CHECK(v == 0.0F);
    for (float v : g.params[1]) CHECK(v == 0.0F);
    for (float v : g.input) CHECK(v == 0.0F);
}

TEST_CASE("sgd updates") {
    Tensor w(Shape{1}, 1.0F);
    std::vector<Tensor*> params{&w};
    OptimizerState plain{0.1, 0.0, 0.0, {}};
    const std::vector<std::vector<float>> g{{1.0F}};
    sgd_step(plain, std::span<Tensor* const>(params), g);
    CHECK(w[0] == doctest::Approx(0.9));

    Tensor v(Shape{1}, 0.0F);
    std::vector<Tensor*> pv{&v};
    OptimizerState heavy{1.0, 0.9, 0.0, {}};
    sgd_step(heavy, std::span<Tensor* const>(pv), g);
    sgd_step(heavy, std::span<Tensor* const>(pv), g);
    CHECK(v[0] == doctest::Approx(-2.9).epsilon(1e-6));
}

TEST_CASE("sgd is deterministic") {
    auto run = [] {
        Model m = make_conv_net(ConvNetSpec{{1, 6, 6}, {2}, 3, true, {}, 3}, 4);
        OptimizerState opt{0.05, 0.9, 1e-4, {}};
        Rng rng(8);
        Tensor x({5, 1, 6, 6});
        for (float& v : x.data) v = static_cast<float>(rng.uniform());
        const std::vector<int> y{0, 1, 2, 0, 1};
        for (int i = 0; i < 3; ++i) {
            const auto g = loss_gradients(m, x, y);
            sgd_step(opt, m, g.params);
        }
        return m.layers()[0].weight.data;
    };
    CHECK(run() == run());
}

TEST_CASE("learning-rate schedules") {
    const auto step = LrSchedule::step(0.1, {2}, 0.1);
    CHECK(lr_at(step, 1) == doctest::Approx(0.1));
    CHECK(lr_at(step, 2) == doctest::Approx(0.01));

    const auto cyc = LrSchedule::cyclic(0.0, 0.1, 4);
    CHECK(lr_at(cyc, 2, 0, 10) == doctest::Approx(0.1));
    CHECK(lr_at(cyc, 0, 0, 10) == 0.0);
    CHECK(lr_at(cyc, 3, 10, 10) == doctest::Approx(0.0));
    CHECK(lr_at(cyc, 1, 0, 10) == doctest::Approx(0.05));
}
