#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtart/checkpoint.hpp"
#include "qtart/dataset.hpp"
#include "qtart/model.hpp"
#include "qtart/optim.hpp"
#include "qtart/scoring.hpp"

namespace qtart {

/// Weighted mean of per-sample smoothed cross-entropy: sum(m_i l_i) / sum(m_i).
struct MaskedLoss {
    double value = 0.0;
    std::vector<double> dlogits;  // (N, C), row-major
};

MaskedLoss masked_loss(const Tensor& logits, std::span<const int> labels, std::span<const float> mask,
                       double smoothing);

/// gamma * (E - tau) / batch_size
double iterations_saved(std::size_t gamma, std::size_t epochs, std::size_t tau, std::size_t batch_size);

// ---------------------------------------------------------------------------
// Training loop

struct BatchContext {
    std::size_t epoch = 0;
    std::size_t iteration = 0;  // within the epoch
    std::size_t replay = 0;
    std::span<const std::size_t> positions;  // dataset positions of the batch
};

/// Hooks let adversarial regimes share the plain loop. `transform` returns the
/// batch the gradient is taken on; `after_backward` receives the input
/// gradient when `input_grad` is set.
struct TrainHooks {
    std::function<Tensor(const Model&, const Tensor&, std::span<const int>, const BatchContext&)> transform;
    std::function<void(const BatchContext&, std::span<const float>)> after_backward;
    std::size_t replays = 1;
    bool input_grad = false;
};

struct LoopConfig {
    std::size_t batch_size = 64;
    double smoothing = 0.0;
    LrSchedule schedule;
    std::uint64_t shuffle_seed = 0;
    /// Per-position loss weights; empty means all ones.
    std::vector<float> sample_weights;
};

struct EpochResult {
    double mean_loss = 0.0;
    std::size_t iterations = 0;
};

/// One pass over `d`. Batches whose weights are all zero are skipped.
EpochResult train_epoch(Model& model, OptimizerState& opt, const Dataset& d, const LoopConfig& cfg,
                        std::size_t epoch, const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Adversarial training

enum class AdvRegime { none, fast, free };

std::string to_string(AdvRegime r);

struct AdvTrainSpec {
    AdvRegime regime = AdvRegime::fast;
    double eps = 8.0 / 255.0;
    double step = 10.0 / 255.0;  // fast: FGSM step from the random start
    std::size_t replays = 4;     // free: minibatch replays m
    std::uint64_t seed = 0;

    void validate() const;
};

/// Random start in the eps-ball, one FGSM step, train on the result.
TrainHooks fast_adversarial_hooks(const AdvTrainSpec& spec, std::size_t batch_size);

/// Observer receives the persistent perturbation after each update.
using DeltaObserver = std::function<void(const BatchContext&, const Tensor& delta)>;

/// Replays each minibatch m times; the input gradient of every pass updates
/// a perturbation that persists across replays and minibatches.
TrainHooks free_adversarial_hooks(const AdvTrainSpec& spec, const InputSpec& input, std::size_t batch_size,
                                  DeltaObserver observer = {});

struct AdvTrainResult {
    std::vector<double> epoch_loss;
    std::size_t iterations = 0;
};

/// `epochs` full passes under loop.schedule (normally cyclic).
AdvTrainResult adversarial_train_fast(Model& model, const Dataset& d, const AdvTrainSpec& spec, std::size_t epochs,
                                      const LoopConfig& loop, OptimizerState& opt);

/// Runs epochs / m passes so that the number of gradient steps matches
/// `epochs` plain passes.
AdvTrainResult adversarial_train_free(Model& model, const Dataset& d, const AdvTrainSpec& spec, std::size_t epochs,
                                      const LoopConfig& loop, OptimizerState& opt, DeltaObserver observer = {});

// ---------------------------------------------------------------------------
// Experiments

enum class Mode { baseline, random_removal, qtart, qtart_fast_adv, qtart_free_adv };

std::string to_string(Mode m);
Mode parse_mode(const std::string& name);

struct ExperimentConfig {
    Mode mode = Mode::qtart;
    std::size_t epochs = 30;     // E
    std::size_t tau = 5;         // scoring epoch
    std::size_t gamma = 0;       // removed samples
    std::size_t label_budget = 0;  // > 0 selects two-phase scoring
    double smoothing = 0.0;
    std::size_t batch_size = 64;
    OptimizerState optimizer;
    LrSchedule schedule = LrSchedule::constant(0.05);
    ScoringConfig scoring;
    AdvTrainSpec adv;
    std::uint64_t shuffle_seed = 0;  // random removal reuses scoring.noise.seed

    void validate(std::size_t n) const;
    /// Canonical text form used for fingerprints.
    std::string describe() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_accuracy = -1.0;  // negative when no test set
    std::size_t iterations = 0;
    std::size_t samples = 0;
    double seconds = 0.0;
    std::uint64_t retained_hash = 0;  // fingerprint of the retained index set
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double final_accuracy = -1.0;
    std::size_t iterations_executed = 0;
    double iterations_saved = 0.0;
    double wall_seconds = 0.0;
    std::optional<Mask> mask;
    std::optional<InstabilityMatrix> instability;
    std::string fingerprint;
};

struct RunOptions {
    const Dataset* test = nullptr;
    /// Written after the mask is frozen and at the end of the run.
    std::optional<std::filesystem::path> checkpoint_path;
    /// Continue from a checkpoint that carries training state.
    const Checkpoint* resume = nullptr;
    /// Stop after this many epochs (for interrupted-run tests).
    std::optional<std::size_t> stop_after;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Warmup on all samples to tau, then score/remove and finish on the
/// retained subset. `model` is trained in place.
TrainReport run_experiment(const ExperimentConfig& cfg, Model& model, const Dataset& train,
                           const RunOptions& options = {});

/// Uniform random choice of gamma positions, seeded in the noise namespace.
Mask random_removal_mask(std::size_t n, std::size_t gamma, std::uint64_t seed);

std::string fingerprint_hex(const std::string& canonical);

}  // namespace qtart
