#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "qtart/checkpoint.hpp"
#include "qtart/evaluate.hpp"
#include "qtart/rng.hpp"
#include "qtart/trainer.hpp"

using namespace qtart;
namespace fs = std::filesystem;

namespace {

Dataset toy_set(std::size_t n, std::uint64_t seed, std::uint64_t split = 0, std::size_t outliers = 0) {
    SyntheticSpec s;
    s.samples = n;
    s.classes = 3;
    s.channels = 2;
    s.height = 8;
    s.width = 8;
    s.outliers = outliers;
    s.seed = seed;
    s.split = split;
    return generate_synthetic(s);
}

Model toy_model(const Dataset& d, std::uint64_t seed) {
    Model m = make_conv_net(ConvNetSpec{d.input_spec(), {4, 6}, 3, true, {}, d.classes}, seed);
    m.set_normalization(compute_stats(d));
    return m;
}

ExperimentConfig toy_config(Mode mode, std::size_t gamma, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.mode = mode;
    cfg.epochs = 5;
    cfg.tau = 2;
    cfg.gamma = gamma;
    cfg.batch_size = 16;
    cfg.optimizer.momentum = 0.9;
    cfg.schedule = LrSchedule::constant(0.02);
    cfg.scoring.noise.seed = seed;
    cfg.shuffle_seed = seed;
    cfg.adv.seed = seed;
    return cfg;
}

std::vector<float> flat_weights(const Model& m) {
    std::vector<float> out;
    for (const Tensor* p : m.parameters()) out.insert(out.end(), p->data.begin(), p->data.end());
    return out;
}

Tensor random_logits(std::size_t n, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    Tensor z({n, c});
    for (float& v : z.data) v = static_cast<float>(rng.normal(0.0, 2.0));
    return z;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qtart-test-trainer-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("masked loss") {
    const Tensor z = random_logits(4, 5, 1);
    const std::vector<int> y{0, 3, 1, 4};
    const std::vector<float> ones(4, 1.0F);
    BasicTape<float> tape;
    const Var l = tape.cross_entropy(tape.leaf(z, false), y, 0.1);
    CHECK(masked_loss(z, y, ones, 0.1).value == doctest::Approx(tape.value(l)[0]).epsilon(1e-6));

    const Tensor two = random_logits(2, 3, 2);
    const std::vector<int> y2{2, 0};
    const std::vector<float> drop_first{0.0F, 1.0F};
    const MaskedLoss ml = masked_loss(two, y2, drop_first, 0.0);
    const auto p = softmax<float>(std::span<const float>(two.data.data() + 3, 3));
    CHECK(ml.value == doctest::Approx(-std::log(p[0])).epsilon(1e-9));
    for (std::size_t k = 0; k < 3; ++k) CHECK(ml.dlogits[k] == 0.0);

    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor big = random_logits(20, 4, 10 + trial);
        std::vector<int> labels(20);
        for (int& v : labels) v = static_cast<int>(rng.below(4));
        std::vector<float> mask(20);
        std::vector<std::size_t> kept;
        for (std::size_t i = 0; i < 20; ++i) {
            mask[i] = rng.uniform() < 0.6 ? 1.0F : 0.0F;
            if (mask[i] != 0.0F) kept.push_back(i);
        }
        if (kept.empty()) continue;
        double expect = 0.0;
        for (std::size_t i : kept) {
            const auto q = softmax<float>(std::span<const float>(big.data.data() + i * 4, 4));
            const auto t = smoothed_target(labels[i], 4, 0.2);
            for (std::size_t k = 0; k < 4; ++k) expect -= t[k] * std::log(q[k]);
        }
        CHECK(masked_loss(big, labels, mask, 0.2).value ==
              doctest::Approx(expect / static_cast<double>(kept.size())).epsilon(1e-9));
    }
    const std::vector<float> none(4, 0.0F);
    CHECK_THROWS(masked_loss(z, y, none, 0.0));
}

TEST_CASE("iterations saved") {
    CHECK(iterations_saved(12, 300, 50, 128) == 23.4375);
    CHECK(iterations_saved(125, 350, 50, 128) == 292.96875);
    CHECK(std::abs(iterations_saved(12, 300, 50, 128) - 23.43) < 0.01);
    CHECK(std::abs(iterations_saved(125, 350, 50, 128) - 292.96) < 0.01);
    CHECK(iterations_saved(0, 300, 50, 128) == 0.0);
    CHECK_THROWS(iterations_saved(1, 50, 50, 128));
}

TEST_CASE("accuracy evaluation") {
    const Dataset d = toy_set(90, 1);
    const Model m = toy_model(d, 1);

    Dataset memorized = d;
    memorized.labels = predict(m, d.images);
    CHECK(evaluate(m, memorized) == 100.0);

    Model constant = m;
    for (auto& l : constant.layers())
        if (l.has_parameters()) {
            std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0F);
            std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0F);
        }
    constant.layers().back().bias[2] = 1.0F;
    Dataset balanced = d;
    for (std::size_t i = 0; i < balanced.size(); ++i) balanced.labels[i] = static_cast<int>(i % 3);
    CHECK(evaluate(constant, balanced) == doctest::Approx(100.0 / 3.0));

    const Tensor logits = m.forward(d.images).logits;
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < d.size(); ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c)
            if (logits[i * 3 + static_cast<std::size_t>(c)] > logits[i * 3 + static_cast<std::size_t>(best)]) best = c;
        CHECK(pred[i] == best);
    }
    CHECK(argmax_rows(Tensor({1, 3}, {1.0F, 1.0F, 0.0F}))[0] == 0);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
    const Dataset d = toy_set(40, 2);
    const Model m = toy_model(d, 2);
    TrainingState st;
    st.optimizer.learning_rate = 0.03;
    st.optimizer.momentum = 0.9;
    st.optimizer.velocity = {Tensor(Shape{3}, 0.5F)};
    st.next_epoch = 7;
    st.retained = std::vector<std::size_t>{1, 4, 9};
    const auto bytes = encode_checkpoint(m, &st);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(flat_weights(back.model) == flat_weights(m));
    CHECK(back.model.normalization() == m.normalization());
    REQUIRE(back.state);
    CHECK(back.state->next_epoch == 7);
    CHECK(*back.state->retained == std::vector<std::size_t>{1, 4, 9});
    CHECK(back.state->optimizer.velocity[0].data == st.optimizer.velocity[0].data);

    auto corrupt = bytes;
    corrupt[0] = 'X';
    try {
        decode_checkpoint(corrupt);
        FAIL("corrupt magic accepted");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    CHECK_THROWS(load_checkpoint(scratch_dir("missing") / "nope.qtck"));
}

TEST_CASE("zero-weight samples match physically absent samples") {
    const Dataset d = toy_set(100, 3);
    const std::vector<std::size_t> absent{5, 17, 42};
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!std::binary_search(absent.begin(), absent.end(), i)) kept.push_back(i);

    LoopConfig loop;
    loop.batch_size = 128;
    loop.schedule = LrSchedule::constant(0.05);
    loop.sample_weights.assign(d.size(), 1.0F);
    for (std::size_t i : absent) loop.sample_weights[i] = 0.0F;
    Model weighted = toy_model(d, 3);
    Model removed = weighted;
    OptimizerState o1, o2;
    LoopConfig plain = loop;
    plain.sample_weights.clear();
    const Dataset sub = subset(d, kept);
    for (std::size_t e = 0; e < 3; ++e) {
        train_epoch(weighted, o1, d, loop, e);
        train_epoch(removed, o2, sub, plain, e);
    }
    const auto a = flat_weights(weighted), b = flat_weights(removed);
    float diff = 0.0F;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff <= 1e-6F);
}

TEST_CASE("gamma zero reduces to the baseline run") {
    const Dataset d = toy_set(120, 4, 0, 10);
    Model base = toy_model(d, 4), zero = base;
    run_experiment(toy_config(Mode::baseline, 0, 4), base, d);
    const TrainReport r = run_experiment(toy_config(Mode::qtart, 0, 4), zero, d);
    CHECK(flat_weights(base) == flat_weights(zero));
    REQUIRE(r.mask);
    CHECK(r.mask->gamma == 0);
}

TEST_CASE("removal modes freeze the mask at tau") {
    const Dataset d = toy_set(120, 5, 0, 10);
    Model m = toy_model(d, 5);
    const TrainReport r = run_experiment(toy_config(Mode::qtart, 12, 5), m, d);
    REQUIRE(r.mask);
    CHECK(r.mask->gamma == 12);
    REQUIRE(r.instability);
    CHECK(r.epochs[1].samples == 120);
    for (std::size_t e = 2; e < 5; ++e) {
        CHECK(r.epochs[e].samples == 108);
        CHECK(r.epochs[e].retained_hash == r.epochs[2].retained_hash);
    }
    CHECK(r.iterations_saved == doctest::Approx(12.0 * 3.0 / 16.0));

    Model rm = toy_model(d, 5);
    const TrainReport rr = run_experiment(toy_config(Mode::random_removal, 120 - 16, 5), rm, d);
    CHECK(rr.epochs.back().samples == 16);
    CHECK(rr.epochs.back().iterations == 1);
    CHECK(random_removal_mask(120, 10, 3).bits == random_removal_mask(120, 10, 3).bits);
    CHECK(random_removal_mask(120, 10, 3).bits != random_removal_mask(120, 10, 4).bits);
}

TEST_CASE("resuming from the tau checkpoint reproduces the uninterrupted run") {
    const Dataset d = toy_set(120, 6, 0, 10);
    const Dataset test = toy_set(60, 6, 1);
    const fs::path dir = scratch_dir("resume");
    const ExperimentConfig cfg = toy_config(Mode::qtart, 12, 6);

    Model full = toy_model(d, 6);
    RunOptions plain;
    plain.test = &test;
    const TrainReport whole = run_experiment(cfg, full, d, plain);

    Model part = toy_model(d, 6);
    RunOptions first;
    first.test = &test;
    first.checkpoint_path = dir / "run.qtck";
    first.stop_after = 3;
    run_experiment(cfg, part, d, first);
    const Checkpoint ck = load_checkpoint(dir / "run.qtck");
    REQUIRE(ck.state);
    CHECK(ck.state->next_epoch == 3);

    Model resumed = toy_model(d, 99);
    RunOptions second;
    second.test = &test;
    second.resume = &ck;
    const TrainReport rest = run_experiment(cfg, resumed, d, second);
    CHECK(std::abs(rest.final_accuracy - whole.final_accuracy) <= 1e-6);
    CHECK(flat_weights(resumed) == flat_weights(full));
}

TEST_CASE("fast adversarial training") {
    const Dataset d = toy_set(80, 7);
    LoopConfig loop;
    loop.batch_size = 16;
    loop.schedule = LrSchedule::cyclic(0.0, 0.05, 3);
    loop.shuffle_seed = 7;

    Model std_model = toy_model(d, 7), adv_model = std_model;
    OptimizerState o1, o2;
    std::vector<double> plain_loss;
    for (std::size_t e = 0; e < 3; ++e) plain_loss.push_back(train_epoch(std_model, o1, d, loop, e).mean_loss);
    AdvTrainSpec zero{AdvRegime::fast, 0.0, 0.0, 1, 7};
    CHECK(adversarial_train_fast(adv_model, d, zero, 3, loop, o2).epoch_loss == plain_loss);
    CHECK(flat_weights(adv_model) == flat_weights(std_model));

    AdvTrainSpec spec{AdvRegime::fast, 0.03, 0.04, 1, 7};
    Model a = toy_model(d, 7), b = a;
    OptimizerState oa, ob;
    CHECK(adversarial_train_fast(a, d, spec, 2, loop, oa).epoch_loss ==
          adversarial_train_fast(b, d, spec, 2, loop, ob).epoch_loss);
    CHECK(flat_weights(a) == flat_weights(b));
}

TEST_CASE("free adversarial training") {
    const Dataset d = toy_set(80, 8);
    LoopConfig loop;
    loop.batch_size = 16;
    loop.schedule = LrSchedule::constant(0.02);
    loop.shuffle_seed = 8;

    Model std_model = toy_model(d, 8), free_model = std_model;
    OptimizerState o1, o2;
    std::vector<double> plain_loss;
    for (std::size_t e = 0; e < 2; ++e) plain_loss.push_back(train_epoch(std_model, o1, d, loop, e).mean_loss);
    AdvTrainSpec zero{AdvRegime::free, 0.0, 0.0, 1, 8};
    CHECK(adversarial_train_free(free_model, d, zero, 2, loop, o2).epoch_loss == plain_loss);
    CHECK(flat_weights(free_model) == flat_weights(std_model));

    AdvTrainSpec spec{AdvRegime::free, 0.1, 0.0, 4, 8};
    Model m = toy_model(d, 8);
    OptimizerState o3;
    std::size_t observed = 0;
    const auto r = adversarial_train_free(m, d, spec, 8, loop, o3,
                                          [&](const BatchContext&, const Tensor&) { ++observed; });
    CHECK(r.epoch_loss.size() == 2);
    CHECK(r.iterations == 2 * 5 * 4);
    CHECK(observed == r.iterations);
}

TEST_CASE("free perturbation persists across replays and minibatches") {
    const InputSpec in{1, 1, 2};
    AdvTrainSpec spec{AdvRegime::free, 0.1, 0.0, 2, 0};
    Tensor last;
    const TrainHooks hooks = free_adversarial_hooks(spec, in, 1, [&](const BatchContext&, const Tensor& delta) { last = delta; });
    const Model unused;
    const Tensor x({1, 1, 1, 2}, 0.5F);
    const std::vector<int> y{0};
    const std::vector<float> up{1.0F, -1.0F}, down{-1.0F, 0.0F};

    hooks.after_backward(BatchContext{0, 0, 0, {}}, up);
    CHECK(last.data == std::vector<float>{0.1F, -0.1F});
    CHECK(hooks.transform(unused, x, y, BatchContext{0, 0, 1, {}}).data == std::vector<float>{0.6F, 0.4F});
    hooks.after_backward(BatchContext{0, 0, 1, {}}, down);
    CHECK(last.data == std::vector<float>{0.0F, -0.1F});
    // Next minibatch starts from the same perturbation.
    CHECK(hooks.transform(unused, x, y, BatchContext{0, 1, 0, {}}).data == std::vector<float>{0.5F, 0.4F});
}

TEST_CASE("experiment config validation and fingerprints") {
    ExperimentConfig cfg = toy_config(Mode::qtart, 10, 1);
    CHECK_NOTHROW(cfg.validate(100));
    cfg.tau = cfg.epochs;
    CHECK_THROWS(cfg.validate(100));
    cfg = toy_config(Mode::qtart, 100, 1);
    CHECK_THROWS(cfg.validate(100));
    CHECK(parse_mode("qtart+free-adv") == Mode::qtart_free_adv);
    CHECK_THROWS(parse_mode("nope"));
    const std::string a = fingerprint_hex(toy_config(Mode::qtart, 10, 1).describe());
    CHECK(a.size() == 16);
    CHECK(a == fingerprint_hex(toy_config(Mode::qtart, 10, 1).describe()));
    CHECK(a != fingerprint_hex(toy_config(Mode::qtart, 11, 1).describe()));
}
