#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "qtart/attacks.hpp"
#include "qtart/evaluate.hpp"
#include "qtart/rng.hpp"
#include "qtart/trainer.hpp"

using namespace qtart;

namespace {

Dataset toy_set(std::size_t n, std::uint64_t seed, std::uint64_t split = 0) {
    SyntheticSpec s;
    s.samples = n;
    s.classes = 3;
    s.channels = 1;
    s.height = 8;
    s.width = 8;
    s.seed = seed;
    s.split = split;
    return generate_synthetic(s);
}

Model toy_model(const Dataset& d, std::uint64_t seed, std::size_t epochs) {
    Model m = make_conv_net(ConvNetSpec{d.input_spec(), {4}, 3, true, {}, d.classes}, seed);
    m.set_normalization(compute_stats(d));
    LoopConfig loop;
    loop.batch_size = 32;
    loop.schedule = LrSchedule::constant(0.01);
    loop.shuffle_seed = seed;
    OptimizerState opt;
    opt.momentum = 0.9;
    for (std::size_t e = 0; e < epochs; ++e) train_epoch(m, opt, d, loop, e);
    return m;
}

Tensor random_images(std::size_t n, const InputSpec& in, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x({n, in.channels, in.height, in.width});
    for (float& v : x.data) v = static_cast<float>(rng.uniform());
    return x;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

float max_linf(const Tensor& a, const Tensor& b) {
    float m = 0.0F;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<AttackSpec> all_specs(double eps) {
    AttackSpec f = AttackSpec::fgsm(eps);
    AttackSpec ff = AttackSpec::ffgsm(eps, 1.25 * eps);
    ff.seed = 3;
    AttackSpec p = AttackSpec::pgd(eps, eps / 4.0, 10, true);
    p.seed = 3;
    AttackSpec mi = AttackSpec::mifgsm(eps, eps / 4.0, 1.0, 5);
    return {f, ff, p, mi};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("attack specs") {
    CHECK(AttackSpec::pgd().name() == "PGD20");
    CHECK(parse_attack_kind(to_string(AttackKind::mifgsm)) == AttackKind::mifgsm);
    CHECK_THROWS(parse_attack_kind("cw"));
    AttackSpec bad = AttackSpec::fgsm(-0.1);
    CHECK_THROWS(bad.validate());
}

TEST_CASE("zero budget returns the input") {
    const Dataset d = toy_set(60, 1);
    const Model m = toy_model(d, 1, 2);
    const Tensor x = random_images(20, d.input_spec(), 4);
    const auto y = random_labels(20, 3, 5);
    for (const AttackSpec& spec : all_specs(0.0)) CHECK(attack(m, x, y, spec).data == x.data);
}

TEST_CASE("every attack stays inside the eps-ball and the pixel box") {
    const Dataset d = toy_set(60, 2);
    const Model m = toy_model(d, 2, 2);
    const Tensor x = random_images(1000, d.input_spec(), 6);
    const auto y = random_labels(1000, 3, 7);
    const double eps = 8.0 / 255.0;
    for (const AttackSpec& spec : all_specs(eps)) {
        const Tensor adv = attack(m, x, y, spec);
        CHECK(max_linf(adv, x) <= eps + 1e-6);
        CHECK(*std::min_element(adv.data.begin(), adv.data.end()) >= 0.0F);
        CHECK(*std::max_element(adv.data.begin(), adv.data.end()) <= 1.0F);
    }
}

TEST_CASE("seeded attacks are deterministic") {
    const Dataset d = toy_set(60, 3);
    const Model m = toy_model(d, 3, 2);
    const Tensor x = random_images(50, d.input_spec(), 8);
    const auto y = random_labels(50, 3, 9);
    for (const AttackSpec& spec : all_specs(0.05)) CHECK(attack(m, x, y, spec, 2).data == attack(m, x, y, spec, 2).data);
    AttackSpec p = AttackSpec::pgd(0.05, 0.01, 3, true);
    p.seed = 1;
    AttackSpec q = p;
    q.seed = 2;
    CHECK(pgd(m, x, y, p).data != pgd(m, x, y, q).data);
}

TEST_CASE("one PGD step without random start is projected FGSM") {
    const Dataset d = toy_set(60, 4);
    const Model m = toy_model(d, 4, 2);
    const Tensor x = random_images(200, d.input_spec(), 10);
    const auto y = random_labels(200, 3, 11);
    const double eps = 0.03, step = 0.05;
    Tensor expect = fgsm(m, x, y, step);
    project_linf(expect, x, eps);
    CHECK(pgd(m, x, y, AttackSpec::pgd(eps, step, 1, false)).data == expect.data);
}

TEST_CASE("FGSM on a logistic model matches the closed form") {
    const std::size_t features = 5;
    Rng rng(12);
    Tensor w({2, features});
    for (float& v : w.data) v = static_cast<float>(rng.normal());
    Tensor b(Shape{2}, {0.3F, -0.2F});
    Model m(InputSpec{features, 1, 1}, 2, {Layer{LayerKind::flatten, {}, {}, 0, 2}, Layer{LayerKind::dense, w, b, 0, 2}});
    const Tensor x = random_images(64, m.input(), 13);
    const auto y = random_labels(64, 2, 14);
    const double eps = 0.1;
    const Tensor adv = fgsm(m, x, y, eps);
    for (std::size_t n = 0; n < 64; ++n) {
        double z[2];
        for (std::size_t c = 0; c < 2; ++c) {
            z[c] = b[c];
            for (std::size_t j = 0; j < features; ++j) z[c] += static_cast<double>(w[c * features + j]) * x[n * features + j];
        }
        const double p1 = 1.0 / (1.0 + std::exp(z[0] - z[1]));
        const double r = p1 - (y[n] == 1 ? 1.0 : 0.0);
        for (std::size_t j = 0; j < features; ++j) {
            const double g = r * (static_cast<double>(w[features + j]) - w[j]);
            const double s = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
            const double expect = std::clamp(x[n * features + j] + eps * s, 0.0, 1.0);
            CHECK(std::abs(adv[n * features + j] - expect) < 1e-6);
        }
    }
}

TEST_CASE("longer PGD is at least as strong on a two-weight model") {
    std::vector<double> gains;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        Tensor w({2, 1}, {static_cast<float>(rng.normal()), static_cast<float>(rng.normal())});
        Model m(InputSpec{1, 1, 1}, 2,
                {Layer{LayerKind::flatten, {}, {}, 0, 2}, Layer{LayerKind::dense, w, Tensor(Shape{2}), 0, 2}});
        const Tensor x = random_images(32, m.input(), 200 + trial);
        const auto y = random_labels(32, 2, 300 + trial);
        const double eps = 0.1;
        const Tensor one = pgd(m, x, y, AttackSpec::pgd(eps, eps / 4.0, 1, false));
        const Tensor twenty = pgd(m, x, y, AttackSpec::pgd(eps, eps / 4.0, 20, false));
        gains.push_back(loss_gradients(m, twenty, y).loss - loss_gradients(m, one, y).loss);
    }
    CHECK(median(gains) >= 0.0);
}

TEST_CASE("momentum accumulator") {
    std::vector<float> acc(2, 0.0F);
    const std::vector<float> g1{1.0F, -3.0F}, g2{2.0F, 2.0F};
    momentum_accumulate(acc, g1, 2, 0.5);
    CHECK(acc == std::vector<float>{0.25F, -0.75F});
    momentum_accumulate(acc, g2, 2, 0.5);
    CHECK(acc == std::vector<float>{0.625F, 0.125F});

    std::vector<float> two_samples{1.0F, 1.0F, 1.0F, 1.0F};
    const std::vector<float> g{0.0F, 0.0F, 4.0F, 0.0F};
    momentum_accumulate(two_samples, g, 2, 0.5);
    CHECK(two_samples == std::vector<float>{0.5F, 0.5F, 1.5F, 0.5F});
}

TEST_CASE("MI-FGSM with zero decay is iterative FGSM") {
    const Dataset d = toy_set(60, 5);
    const Model m = toy_model(d, 5, 2);
    const Tensor x = random_images(100, d.input_spec(), 15);
    const auto y = random_labels(100, 3, 16);
    const AttackSpec mi = AttackSpec::mifgsm(0.05, 0.01, 0.0, 6);
    CHECK(mifgsm(m, x, y, mi).data == pgd(m, x, y, AttackSpec::pgd(0.05, 0.01, 6, false)).data);
}

TEST_CASE("robustness evaluation") {
    const Dataset train = toy_set(150, 6);
    const Dataset test = toy_set(90, 6, 1);
    const Model m = toy_model(train, 6, 5);
    CHECK(evaluate_robustness(m, test, AttackSpec::pgd(0.0, 0.01, 5, true)) == evaluate(m, test));

    // All weights zero, bias picks class 1: the input gradient vanishes.
    Model constant = m;
    for (auto& l : constant.layers())
        if (l.has_parameters()) {
            std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0F);
            std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0F);
        }
    constant.layers().back().bias[1] = 1.0F;
    const double prior = 100.0 * static_cast<double>(std::count(test.labels.begin(), test.labels.end(), 1)) /
                         static_cast<double>(test.size());
    CHECK(evaluate_robustness(constant, test, AttackSpec::pgd()) == doctest::Approx(prior));

    std::vector<double> drops;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Model s = toy_model(train, seed, 3);
        drops.push_back(evaluate(s, test) - evaluate_robustness(s, test, AttackSpec::pgd(0.1, 0.025, 10, true)));
    }
    CHECK(median(drops) >= 0.0);
}

TEST_CASE("transfer matrix") {
    const Dataset train = toy_set(150, 7);
    const Dataset test = toy_set(60, 7, 1);
    const Model target = toy_model(train, 1, 3);
    const Model a = toy_model(train, 2, 3);
    const Model b = toy_model(train, 3, 3);
    const AttackSpec spec = AttackSpec::fgsm(0.1);

    {
        const std::vector<const Model*> src{&target};
        const std::vector<std::string> names{"target"};
        const TransferMatrix t = transfer_eval(target, src, names, test, spec);
        CHECK(t.mean == evaluate_robustness(target, test, spec));
        CHECK(t.stddev == 0.0);
        CHECK(t.includes_self);
    }
    {
        const Model twin = a;
        const std::vector<const Model*> src{&a, &twin};
        const std::vector<std::string> names{"a", "a-copy"};
        const TransferMatrix t = transfer_eval(target, src, names, test, spec);
        CHECK(t.accuracy[0] == t.accuracy[1]);
    }
    {
        const std::vector<const Model*> src{&a, &b, &target};
        const std::vector<std::string> names{"a", "b", "target"};
        TransferMatrix t = transfer_eval(target, src, names, test, spec);
        CHECK(t.accuracy[0] == evaluate_transfer(a, target, test, spec));
        CHECK(t.accuracy[1] == evaluate_transfer(b, target, test, spec));
        CHECK(t.accuracy[2] == evaluate_robustness(target, test, spec));
        const double mean = (t.accuracy[0] + t.accuracy[1] + t.accuracy[2]) / 3.0;
        double var = 0.0;
        for (double v : t.accuracy) var += (v - mean) * (v - mean);
        CHECK(t.mean == doctest::Approx(mean).epsilon(1e-12));
        CHECK(t.stddev == doctest::Approx(std::sqrt(var / 3.0)).epsilon(1e-12));

        TransferMatrix doubled = t;
        doubled.accuracy.insert(doubled.accuracy.end(), t.accuracy.begin(), t.accuracy.end());
        doubled.summarize();
        CHECK(doubled.mean == doctest::Approx(t.mean).epsilon(1e-12));
        CHECK(doubled.stddev == doctest::Approx(t.stddev).epsilon(1e-12));
    }
}
