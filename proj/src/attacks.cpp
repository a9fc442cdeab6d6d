#include "qtart/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qtart/evaluate.hpp"
#include "qtart/rng.hpp"

namespace qtart {

std::string to_string(AttackKind k) {
    switch (k) {
    case AttackKind::fgsm:
        return "fgsm";
    case AttackKind::ffgsm:
        return "ffgsm";
    case AttackKind::pgd:
        return "pgd";
    case AttackKind::mifgsm:
        return "mifgsm";
    }
    return "fgsm";
}

AttackKind parse_attack_kind(const std::string& name) {
    for (AttackKind k : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd, AttackKind::mifgsm}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw std::invalid_argument("unknown attack '" + name + "'");
}

void AttackSpec::validate() const {
    if (!(eps >= 0.0)) {
        throw std::invalid_argument("attack: eps must be non-negative");
    }
    if (!(step >= 0.0)) {
        throw std::invalid_argument("attack: step must be non-negative");
    }
    if (steps == 0) {
        throw std::invalid_argument("attack: steps must be at least 1");
    }
    if (!(lo < hi)) {
        throw std::invalid_argument("attack: empty clamp range");
    }
}

std::string AttackSpec::name() const {
    switch (kind) {
    case AttackKind::fgsm:
        return "FGSM";
    case AttackKind::ffgsm:
        return "FFGSM";
    case AttackKind::pgd:
        return "PGD" + std::to_string(steps);
    case AttackKind::mifgsm:
        return "MIFGSM";
    }
    return "FGSM";
}

AttackSpec AttackSpec::fgsm(double eps) {
    AttackSpec s;
    s.kind = AttackKind::fgsm;
    s.eps = eps;
    s.step = eps;
    return s;
}

AttackSpec AttackSpec::ffgsm(double eps, double step) {
    AttackSpec s;
    s.kind = AttackKind::ffgsm;
    s.eps = eps;
    s.step = step;
    return s;
}

AttackSpec AttackSpec::pgd(double eps, double step, std::size_t steps, bool random_init) {
    AttackSpec s;
    s.kind = AttackKind::pgd;
    s.eps = eps;
    s.step = step;
    s.steps = steps;
    s.random_init = random_init;
    return s;
}

AttackSpec AttackSpec::mifgsm(double eps, double step, double decay, std::size_t steps) {
    AttackSpec s;
    s.kind = AttackKind::mifgsm;
    s.eps = eps;
    s.step = step;
    s.decay = decay;
    s.steps = steps;
    return s;
}

namespace {

float sign(float v) { return v > 0.0F ? 1.0F : (v < 0.0F ? -1.0F : 0.0F); }

float clamp(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

void check_batch(const Tensor& x, std::span<const int> labels) {
    if (x.rank() == 0 || x.dim(0) != labels.size()) {
        throw std::invalid_argument("attack: batch of " + to_string(x.shape) + " with " +
                                    std::to_string(labels.size()) + " labels");
    }
}

void random_start(Tensor& adv, double eps, float lo, float hi, std::uint64_t seed) {
    Rng rng(seed);
    for (float& v : adv.data) {
        v = clamp(v + static_cast<float>(rng.uniform(-eps, eps)), lo, hi);
    }
}

}  // namespace

std::vector<float> input_gradient(const Model& model, const Tensor& x, std::span<const int> labels) {
    return loss_gradients<float>(model, x, labels, 0.0, {}, true, false).input;
}

void project_linf(Tensor& adv, const Tensor& x, double eps, float lo, float hi) {
    if (adv.shape != x.shape) {
        throw std::invalid_argument("project_linf: shape mismatch");
    }
    const float e = static_cast<float>(eps);
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const float v = std::min(std::max(adv[i], x[i] - e), x[i] + e);
        adv[i] = clamp(v, lo, hi);
    }
}

void momentum_accumulate(std::span<float> acc, std::span<const float> grad, std::size_t per_sample, double decay) {
    if (acc.size() != grad.size() || per_sample == 0 || grad.size() % per_sample != 0) {
        throw std::invalid_argument("momentum_accumulate: inconsistent sizes");
    }
    for (std::size_t base = 0; base < grad.size(); base += per_sample) {
        double l1 = 0.0;
        for (std::size_t j = 0; j < per_sample; ++j) {
            l1 += std::abs(static_cast<double>(grad[base + j]));
        }
        for (std::size_t j = 0; j < per_sample; ++j) {
            const double g = l1 > 0.0 ? grad[base + j] / l1 : 0.0;
            acc[base + j] = static_cast<float>(decay * acc[base + j] + g);
        }
    }
}

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double eps, float lo, float hi) {
    check_batch(x, labels);
    Tensor adv = x;
    if (eps == 0.0) {
        return adv;
    }
    const auto g = input_gradient(model, x, labels);
    const float e = static_cast<float>(eps);
    for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] = clamp(x[i] + e * sign(g[i]), lo, hi);
    }
    return adv;
}

Tensor ffgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
             std::uint64_t key) {
    spec.validate();
    check_batch(x, labels);
    Tensor adv = x;
    if (spec.eps == 0.0) {
        return adv;
    }
    random_start(adv, spec.eps, spec.lo, spec.hi, derive_seed(spec.seed, stream::attack, key));
    const auto g = input_gradient(model, adv, labels);
    const float a = static_cast<float>(spec.step);
    for (std::size_t i = 0; i < adv.size(); ++i) {
        adv[i] += a * sign(g[i]);
    }
    project_linf(adv, x, spec.eps, spec.lo, spec.hi);
    return adv;
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
           std::uint64_t key) {
    spec.validate();
    check_batch(x, labels);
    Tensor adv = x;
    if (spec.eps == 0.0) {
        return adv;
    }
    if (spec.random_init) {
        random_start(adv, spec.eps, spec.lo, spec.hi, derive_seed(spec.seed, stream::attack, key));
    }
    const float a = static_cast<float>(spec.step);
    for (std::size_t s = 0; s < spec.steps; ++s) {
        const auto g = input_gradient(model, adv, labels);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            adv[i] = adv[i] + a * sign(g[i]);
        }
        project_linf(adv, x, spec.eps, spec.lo, spec.hi);
    }
    return adv;
}

Tensor mifgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec) {
    spec.validate();
    check_batch(x, labels);
    Tensor adv = x;
    if (spec.eps == 0.0) {
        return adv;
    }
    std::vector<float> acc(x.size(), 0.0F);
    const float a = static_cast<float>(spec.step);
    for (std::size_t s = 0; s < spec.steps; ++s) {
        const auto g = input_gradient(model, adv, labels);
        momentum_accumulate(acc, g, x.stride0(), spec.decay);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            adv[i] = adv[i] + a * sign(acc[i]);
        }
        project_linf(adv, x, spec.eps, spec.lo, spec.hi);
    }
    return adv;
}

Tensor attack(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
              std::uint64_t key) {
    switch (spec.kind) {
    case AttackKind::fgsm:
        spec.validate();
        return fgsm(model, x, labels, spec.eps, spec.lo, spec.hi);
    case AttackKind::ffgsm:
        return ffgsm(model, x, labels, spec, key);
    case AttackKind::pgd:
        return pgd(model, x, labels, spec, key);
    case AttackKind::mifgsm:
        return mifgsm(model, x, labels, spec);
    }
    throw std::invalid_argument("attack: unknown kind");
}

double evaluate_transfer(const Model& source, const Model& target, const Dataset& test, const AttackSpec& spec,
                         std::size_t batch_size) {
    if (!(source.input() == target.input()) || source.classes() != target.classes()) {
        throw std::invalid_argument("transfer: source and target models differ in input or class count");
    }
    spec.validate();
    const auto shards = batches(test.size(), batch_size, 0, 0, false);
    std::vector<int> predicted(test.size(), 0);
    const auto count = static_cast<std::ptrdiff_t>(shards.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < count; ++s) {
        const auto& rows = shards[static_cast<std::size_t>(s)];
        const Tensor x = batch_images(test, rows);
        const auto y = batch_labels(test, rows);
        const auto p = predict(target, attack(source, x, y, spec, static_cast<std::uint64_t>(s)));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            predicted[rows[i]] = p[i];
        }
    }
    return accuracy_percent(predicted, test.labels);
}

double evaluate_robustness(const Model& model, const Dataset& test, const AttackSpec& spec, std::size_t batch_size) {
    return evaluate_transfer(model, model, test, spec, batch_size);
}

void TransferMatrix::summarize() {
    if (accuracy.empty()) {
        throw std::invalid_argument("transfer: no sources");
    }
    double sum = 0.0;
    for (double a : accuracy) {
        sum += a;
    }
    mean = sum / static_cast<double>(accuracy.size());
    double sq = 0.0;
    for (double a : accuracy) {
        sq += (a - mean) * (a - mean);
    }
    stddev = std::sqrt(sq / static_cast<double>(accuracy.size()));
}

TransferMatrix transfer_eval(const Model& target, std::span<const Model* const> sources,
                             std::span<const std::string> source_names, const Dataset& test, const AttackSpec& spec,
                             std::string target_name, std::size_t batch_size) {
    if (sources.empty()) {
        throw std::invalid_argument("transfer: no source models");
    }
    if (!source_names.empty() && source_names.size() != sources.size()) {
        throw std::invalid_argument("transfer: source name count does not match source count");
    }
    TransferMatrix m;
    m.target = std::move(target_name);
    m.includes_self = false;
    for (std::size_t k = 0; k < sources.size(); ++k) {
        m.sources.push_back(source_names.empty() ? "source" + std::to_string(k) : source_names[k]);
        m.accuracy.push_back(evaluate_transfer(*sources[k], target, test, spec, batch_size));
        m.includes_self = m.includes_self || sources[k] == &target || m.sources.back() == m.target;
    }
    m.summarize();
    return m;
}

}  // namespace qtart
