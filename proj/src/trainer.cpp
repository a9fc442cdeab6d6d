#include "qtart/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "qtart/attacks.hpp"
#include "qtart/evaluate.hpp"
#include "qtart/rng.hpp"

namespace qtart {

MaskedLoss masked_loss(const Tensor& logits, std::span<const int> labels, std::span<const float> mask,
                       double smoothing) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || mask.size() != labels.size()) {
        throw std::invalid_argument("masked_loss: logits " + to_string(logits.shape) + ", " +
                                    std::to_string(labels.size()) + " labels, " + std::to_string(mask.size()) +
                                    " mask entries");
    }
    double total = 0.0;
    for (float m : mask) {
        total += m;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("masked_loss: every sample is masked out");
    }
    const std::size_t n = labels.size(), c = logits.dim(1);
    MaskedLoss out;
    out.dlogits.assign(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0.0F) {
            continue;
        }
        const auto target = smoothed_target(labels[i], c, smoothing);
        const auto p = softmax<float>(std::span<const float>(logits.data.data() + i * c, c));
        double loss = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            loss -= target[k] * std::log(std::max(p[k], 1e-300));
            out.dlogits[i * c + k] = mask[i] * (p[k] - target[k]) / total;
        }
        out.value += mask[i] * loss / total;
    }
    return out;
}

double iterations_saved(std::size_t gamma, std::size_t epochs, std::size_t tau, std::size_t batch_size) {
    if (tau >= epochs) {
        throw std::invalid_argument("iterations_saved: tau must be smaller than E");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("iterations_saved: batch size must be positive");
    }
    return static_cast<double>(gamma) * static_cast<double>(epochs - tau) / static_cast<double>(batch_size);
}

EpochResult train_epoch(Model& model, OptimizerState& opt, const Dataset& d, const LoopConfig& cfg,
                        std::size_t epoch, const TrainHooks& hooks) {
    if (!cfg.sample_weights.empty() && cfg.sample_weights.size() != d.size()) {
        throw std::invalid_argument("train_epoch: sample weights do not match dataset size");
    }
    const std::size_t replays = std::max<std::size_t>(hooks.replays, 1);
    const auto order = batches(d.size(), cfg.batch_size, cfg.shuffle_seed, epoch, true);
    EpochResult result;
    double loss_sum = 0.0;
    for (std::size_t it = 0; it < order.size(); ++it) {
        const auto& rows = order[it];
        std::vector<float> weights;
        if (!cfg.sample_weights.empty()) {
            for (std::size_t r : rows) {
                weights.push_back(cfg.sample_weights[r]);
            }
            if (std::all_of(weights.begin(), weights.end(), [](float w) { return w == 0.0F; })) {
                continue;
            }
        }
        const Tensor x = batch_images(d, rows);
        const auto y = batch_labels(d, rows);
        for (std::size_t r = 0; r < replays; ++r) {
            const BatchContext ctx{epoch, it, r, rows};
            const Tensor xb = hooks.transform ? hooks.transform(model, x, y, ctx) : x;
            opt.learning_rate = lr_at(cfg.schedule, epoch, it * replays + r, order.size() * replays);
            const auto g = loss_gradients<float>(model, xb, y, cfg.smoothing, weights, hooks.input_grad, true);
            sgd_step(opt, model, g.params);
            if (hooks.after_backward) {
                hooks.after_backward(ctx, g.input);
            }
            loss_sum += g.loss;
            ++result.iterations;
        }
    }
    result.mean_loss = result.iterations ? loss_sum / static_cast<double>(result.iterations) : 0.0;
    return result;
}

// ---------------------------------------------------------------------------

std::string to_string(AdvRegime r) {
    switch (r) {
    case AdvRegime::none:
        return "none";
    case AdvRegime::fast:
        return "fast";
    case AdvRegime::free:
        return "free";
    }
    return "none";
}

void AdvTrainSpec::validate() const {
    if (!(eps >= 0.0) || !(step >= 0.0)) {
        throw std::invalid_argument("adversarial training: eps and step must be non-negative");
    }
    if (regime == AdvRegime::free && replays == 0) {
        throw std::invalid_argument("adversarial training: replay count must be at least 1");
    }
}

TrainHooks fast_adversarial_hooks(const AdvTrainSpec& spec, std::size_t /*batch_size*/) {
    spec.validate();
    TrainHooks hooks;
    hooks.transform = [spec](const Model& model, const Tensor& x, std::span<const int> y, const BatchContext& ctx) {
        if (spec.eps == 0.0) {
            return x;
        }
        Tensor adv = x;
        Rng rng(derive_seed(spec.seed, stream::attack, ctx.epoch + 1, ctx.iteration));
        for (float& v : adv.data) {
            v = std::clamp(v + static_cast<float>(rng.uniform(-spec.eps, spec.eps)), 0.0F, 1.0F);
        }
        const auto g = input_gradient(model, adv, y);
        const float a = static_cast<float>(spec.step);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            adv[i] += g[i] > 0.0F ? a : (g[i] < 0.0F ? -a : 0.0F);
        }
        project_linf(adv, x, spec.eps);
        return adv;
    };
    return hooks;
}

TrainHooks free_adversarial_hooks(const AdvTrainSpec& spec, const InputSpec& input, std::size_t batch_size,
                                  DeltaObserver observer) {
    spec.validate();
    auto delta = std::make_shared<Tensor>(Shape{batch_size, input.channels, input.height, input.width});
    TrainHooks hooks;
    hooks.replays = spec.replays;
    hooks.input_grad = true;
    hooks.transform = [delta](const Model&, const Tensor& x, std::span<const int>, const BatchContext&) {
        Tensor adv = x;
        for (std::size_t i = 0; i < adv.size(); ++i) {
            adv[i] = std::clamp(x[i] + (*delta)[i], 0.0F, 1.0F);
        }
        return adv;
    };
    hooks.after_backward = [delta, spec, observer](const BatchContext& ctx, std::span<const float> g) {
        const float e = static_cast<float>(spec.eps);
        // A short final batch updates the leading rows only.
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float s = g[i] > 0.0F ? 1.0F : (g[i] < 0.0F ? -1.0F : 0.0F);
            (*delta)[i] = std::clamp((*delta)[i] + e * s, -e, e);
        }
        if (observer) {
            observer(ctx, *delta);
        }
    };
    return hooks;
}

AdvTrainResult adversarial_train_fast(Model& model, const Dataset& d, const AdvTrainSpec& spec, std::size_t epochs,
                                      const LoopConfig& loop, OptimizerState& opt) {
    const TrainHooks hooks = fast_adversarial_hooks(spec, loop.batch_size);
    AdvTrainResult out;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto r = train_epoch(model, opt, d, loop, e, hooks);
        out.epoch_loss.push_back(r.mean_loss);
        out.iterations += r.iterations;
    }
    return out;
}

AdvTrainResult adversarial_train_free(Model& model, const Dataset& d, const AdvTrainSpec& spec, std::size_t epochs,
                                      const LoopConfig& loop, OptimizerState& opt, DeltaObserver observer) {
    const TrainHooks hooks = free_adversarial_hooks(spec, d.input_spec(), loop.batch_size, std::move(observer));
    const std::size_t passes = std::max<std::size_t>(epochs / std::max<std::size_t>(spec.replays, 1), 1);
    AdvTrainResult out;
    for (std::size_t e = 0; e < passes; ++e) {
        const auto r = train_epoch(model, opt, d, loop, e, hooks);
        out.epoch_loss.push_back(r.mean_loss);
        out.iterations += r.iterations;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Mode m) {
    switch (m) {
    case Mode::baseline:
        return "baseline";
    case Mode::random_removal:
        return "random-removal";
    case Mode::qtart:
        return "qtart";
    case Mode::qtart_fast_adv:
        return "qtart+fast-adv";
    case Mode::qtart_free_adv:
        return "qtart+free-adv";
    }
    return "baseline";
}

Mode parse_mode(const std::string& name) {
    for (Mode m : {Mode::baseline, Mode::random_removal, Mode::qtart, Mode::qtart_fast_adv, Mode::qtart_free_adv}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown mode '" + name + "'");
}

void ExperimentConfig::validate(std::size_t n) const {
    if (epochs == 0 || tau >= epochs) {
        throw std::invalid_argument("experiment: need 0 <= tau < E, got tau=" + std::to_string(tau) +
                                    " E=" + std::to_string(epochs));
    }
    if (gamma > n) {
        throw std::invalid_argument("experiment: gamma=" + std::to_string(gamma) + " exceeds N=" + std::to_string(n));
    }
    if (gamma == n && gamma > 0) {
        throw std::invalid_argument("experiment: removing every sample leaves nothing to train on");
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) {
        throw std::invalid_argument("experiment: label smoothing must lie in [0, 1)");
    }
    if (batch_size == 0) {
        throw std::invalid_argument("experiment: batch size must be positive");
    }
    optimizer.validate();
    scoring.noise.validate();
    adv.validate();
}

std::string ExperimentConfig::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "mode=" << to_string(mode) << ";E=" << epochs << ";tau=" << tau << ";gamma=" << gamma
       << ";budget=" << label_budget << ";smoothing=" << smoothing << ";batch=" << batch_size
       << ";lr=" << optimizer.learning_rate << ";momentum=" << optimizer.momentum
       << ";decay=" << optimizer.weight_decay << ";schedule=" << to_string(schedule.kind) << ':' << schedule.base
       << ':' << schedule.multiplier << ':' << schedule.lr_min << ':' << schedule.lr_max << ':';
    for (std::size_t m : schedule.milestones) {
        os << m << ',';
    }
    os << ";scoring=" << scoring.describe() << ";adv=" << to_string(adv.regime) << ':' << adv.eps << ':' << adv.step
       << ':' << adv.replays << ':' << adv.seed << ";shuffle=" << shuffle_seed;
    return os.str();
}

std::string fingerprint_hex(const std::string& canonical) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical) {
        h = (h ^ c) * 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

Mask random_removal_mask(std::size_t n, std::size_t gamma, std::uint64_t seed) {
    if (gamma > n) {
        throw std::invalid_argument("random removal: gamma exceeds N");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, stream::removal, n, gamma + 1));
    for (std::size_t i = 0; i < gamma; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(gamma);
    return Mask::from_removed(n, perm, "random", seed);
}

namespace {

std::uint64_t hash_indices(std::span<const std::size_t> idx) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t v : idx) {
        h = (h ^ mix64(v)) * 1099511628211ULL;
    }
    return h;
}

AdvRegime regime_for(Mode m) {
    switch (m) {
    case Mode::qtart_fast_adv:
        return AdvRegime::fast;
    case Mode::qtart_free_adv:
        return AdvRegime::free;
    default:
        return AdvRegime::none;
    }
}

}  // namespace

TrainReport run_experiment(const ExperimentConfig& cfg, Model& model, const Dataset& train,
                           const RunOptions& options) {
    cfg.validate(train.size());
    const auto started = std::chrono::steady_clock::now();
    const AdvRegime regime = regime_for(cfg.mode);

    // Free training replays every minibatch m times, so it runs E/m passes and
    // scores after tau/m of them.
    const std::size_t m = regime == AdvRegime::free ? std::max<std::size_t>(cfg.adv.replays, 1) : 1;
    const std::size_t total = std::max<std::size_t>(cfg.epochs / m, 1);
    const std::size_t tau = cfg.tau / m;

    LoopConfig loop;
    loop.batch_size = cfg.batch_size;
    loop.smoothing = cfg.smoothing;
    loop.schedule = cfg.schedule;
    loop.schedule.total_epochs = total;
    loop.shuffle_seed = cfg.shuffle_seed;

    TrainHooks hooks;
    AdvTrainSpec adv = cfg.adv;
    adv.regime = regime;
    if (regime == AdvRegime::fast) {
        hooks = fast_adversarial_hooks(adv, cfg.batch_size);
    } else if (regime == AdvRegime::free) {
        hooks = free_adversarial_hooks(adv, train.input_spec(), cfg.batch_size);
    }

    OptimizerState opt = cfg.optimizer;
    std::size_t start = 0;
    std::optional<std::vector<std::size_t>> retained;  // positions in `train`
    if (options.resume) {
        if (!options.resume->state) {
            throw std::invalid_argument("resume: checkpoint carries no training state");
        }
        model = options.resume->model;
        opt = options.resume->state->optimizer;
        start = options.resume->state->next_epoch;
        if (options.resume->state->retained) {
            std::unordered_map<std::size_t, std::size_t> position;
            for (std::size_t i = 0; i < train.size(); ++i) {
                position[train.origin[i]] = i;
            }
            std::vector<std::size_t> pos;
            for (std::size_t o : *options.resume->state->retained) {
                const auto it = position.find(o);
                if (it == position.end()) {
                    throw std::invalid_argument("resume: retained index " + std::to_string(o) +
                                                " is not part of the training set");
                }
                pos.push_back(it->second);
            }
            retained = std::move(pos);
        }
    }

    TrainReport report;
    report.fingerprint = fingerprint_hex(cfg.describe());
    report.iterations_saved = iterations_saved(cfg.gamma, cfg.epochs, cfg.tau, cfg.batch_size);

    auto save = [&](std::size_t next_epoch) {
        if (!options.checkpoint_path) {
            return;
        }
        TrainingState st;
        st.optimizer = opt;
        st.next_epoch = next_epoch;
        if (retained) {
            std::vector<std::size_t> origin;
            for (std::size_t p : *retained) {
                origin.push_back(train.origin[p]);
            }
            st.retained = std::move(origin);
        }
        save_checkpoint(*options.checkpoint_path, model, &st);
    };

    Dataset current = retained ? subset(train, *retained) : train;
    if (!retained && start > tau) {
        throw std::invalid_argument("resume: checkpoint is past the scoring epoch but has no retained set");
    }

    for (std::size_t e = start; e < total; ++e) {
        if (e == tau && !retained) {
            Mask mask = Mask::all_ones(train.size(), "none");
            switch (cfg.mode) {
            case Mode::baseline:
                break;
            case Mode::random_removal:
                mask = random_removal_mask(train.size(), cfg.gamma, cfg.scoring.noise.seed);
                break;
            default:
                if (cfg.label_budget > 0) {
                    mask = two_phase_score(model, train, cfg.label_budget, cfg.gamma, cfg.scoring);
                } else {
                    InstabilityMatrix scores = score_dataset(model, train, cfg.scoring);
                    mask = compute_mask(scores.aggregated, cfg.gamma, "qtart:" + scores.fingerprint,
                                        cfg.scoring.noise.seed);
                    report.instability = std::move(scores);
                }
                break;
            }
            retained = mask.retained();
            current = apply_mask(train, mask);
            report.mask = std::move(mask);
            save(e);
        }

        const auto t0 = std::chrono::steady_clock::now();
        const EpochResult r = train_epoch(model, opt, current, loop, e, hooks);
        EpochRecord rec;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.epoch = e;
        rec.train_loss = r.mean_loss;
        rec.iterations = r.iterations;
        rec.samples = current.size();
        if (retained) {
            rec.retained_hash = hash_indices(current.origin);
        }
        if (options.test) {
            rec.test_accuracy = evaluate(model, *options.test);
        }
        report.iterations_executed += r.iterations;
        report.epochs.push_back(rec);
        if (options.on_epoch) {
            options.on_epoch(rec);
        }
        if (options.stop_after && report.epochs.size() >= *options.stop_after && e + 1 < total) {
            save(e + 1);
            report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            return report;
        }
    }
    if (options.test) {
        report.final_accuracy = report.epochs.empty() ? evaluate(model, *options.test)
                                                      : report.epochs.back().test_accuracy;
    }
    save(total);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

}  // namespace qtart
